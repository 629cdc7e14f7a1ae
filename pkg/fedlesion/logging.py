# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# logging.py
"""
FedLesion - Logging signal class and EventLogger.
"""

import json
import logging
import math
from typing import Optional

from opentelemetry import _logs
from opentelemetry.sdk._logs import LoggerProvider, LoggingHandler
from opentelemetry.sdk._logs.export import BatchLogRecordProcessor, SimpleLogRecordProcessor, ConsoleLogExporter

from .common import _FedLesionCommon
from .config import Configuration as Config
from .attributes import RunAttributes as Attributes
from .formatting import AttrDict, EventPayload, log_event_name_key, log_level


def _finite_or_none(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class EventLogger:
    """
    Emits log records purely as OTel log telemetry, bypassing Python's
    logging hierarchy so round summaries never show up in console handlers.
    """

    def __init__(self, provider: LoggerProvider, logger_name: str = "event_logger"):
        self._logger = provider.get_logger(logger_name)

    def _send_event(self, body: EventPayload, event_name: str, attributes: Optional[AttrDict] = None):
        if not isinstance(body, str):
            # NaN (an empty pool) is not valid JSON
            body = json.dumps({k: _finite_or_none(v) for k, v in body.items()}, sort_keys=True)
        attributes = dict(attributes or {})
        attributes[log_event_name_key] = event_name
        self._logger.emit(body=body, attributes=attributes)


class _EventNameFilter(logging.Filter):
    # Records from the package logger are tagged as plain log lines, events keep their name
    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, log_event_name_key):
            setattr(record, log_event_name_key, "__LOG__")
        return True


class _FedLesionLogger(_FedLesionCommon):
    # Singleton instance (internal only); provide a logger handler for OpenTelemetry log instrumentation
    _instance = None

    def __init__(self, config: Config, attributes: Attributes):
        super().__init__(config, attributes)
        self.log_level = log_level(config._get_logging_level())
        self.exporter = self._make_exporter('logs', ConsoleLogExporter)
        processor_class = SimpleLogRecordProcessor if self.use_console_exporters else BatchLogRecordProcessor
        self._processor = processor_class(self.exporter)
        self._provider = LoggerProvider(resource=self.resource)
        self._provider.add_log_record_processor(self._processor)
        self._install_global(_logs.set_logger_provider, self._provider, 'logger')
        self._event_logger = EventLogger(self._provider, logger_name=f'{self.service_name}_event_logger')

    def _get_log_handler(self) -> LoggingHandler:
        handler = LoggingHandler(level=self.log_level, logger_provider=self._provider)
        handler.addFilter(_EventNameFilter())
        return handler

    def _get_event_logger(self) -> EventLogger:
        return self._event_logger
