# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# tracing.py
"""
FedLesion - Tracing signal class and span classes.
"""

import math
from typing import Dict, Optional

from opentelemetry import trace
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter, SimpleSpanProcessor
from opentelemetry.trace.status import StatusCode

from .common import _FedLesionCommon
from .config import Configuration as Config
from .attributes import RunAttributes as Attributes
from .formatting import AttrDict

# Pool means attached to a round span
_ROUND_METRICS = ('pre', 'dsc', 'n')


class RunSpan:
    """
    Span handed out by get_trace. This base span records nothing and is what
    get_trace yields when tracing is off, so instrumented code never has to check.
    """
    noop = True

    def __init__(self, name: str, attributes: AttrDict = None) -> None:
        self._name = name
        self._attributes: AttrDict = dict(attributes or {})

    def add_event(self, name: str, attributes: AttrDict = None) -> None:
        """
        Add an event named '<span name>.<name>' to the span.

        Args:
            name (str): The name of the event.
            attributes (dict, optional): Additional attributes for the event. Defaults to None.
        """

    def add_exception(self, exception: Exception) -> None:
        pass

    def set_error_status(self, msg: Optional[str] = None) -> None:
        pass

    def add_attributes(self, attributes: AttrDict) -> None:
        pass

    def add_round_result(self, pools: Dict[str, Dict[str, float]]) -> None:
        """
        Attach the PRE, DSC and patient count of every evaluated pool as
        '<metric>.<pool>' attributes. Empty pools (NaN) are skipped.
        """
        values: AttrDict = {}
        for pool, means in pools.items():
            for metric in _ROUND_METRICS:
                value = means.get(metric)
                if value is not None and math.isfinite(value):
                    values[f"{metric}.{pool}"] = value
        self.add_attributes(values)

    def _close(self) -> None:
        pass


class _LiveSpan(RunSpan):
    noop = False

    def __init__(self, name: str, span: trace.Span, attributes: AttrDict = None) -> None:
        super().__init__(name, attributes)
        self._span = span

    def add_event(self, name: str, attributes: AttrDict = None) -> None:
        self._span.add_event(f"{self._name}.{name}", attributes=attributes or {})

    def add_exception(self, exception: Exception) -> None:
        if exception is None:
            exception = Exception("Generic exception because the exception passed was None.")
        self._span.record_exception(exception, attributes={
            "exception.type": type(exception).__name__,
            "exception.message": str(exception),
        })

    def set_error_status(self, msg: Optional[str] = None) -> None:
        self._span.set_status(StatusCode.ERROR, msg or f"Span '{self._name}' failed.")

    def add_attributes(self, attributes: AttrDict) -> None:
        if not isinstance(attributes, dict):
            raise TypeError("Attributes must be a dictionary of string keys.")
        self._attributes.update(attributes)
        self._span.set_attributes(self._attributes)

    def _close(self) -> None:
        self._span.end()


class _FedLesionTrace(_FedLesionCommon):
    # Singleton instance (internal only); provide a single instance of the tracing class
    _instance = None

    def __init__(self, config: Config, attributes: Attributes):
        super().__init__(config, attributes)
        self.exporter = self._make_exporter('traces', ConsoleSpanExporter)
        # console output in span order, synchronously; collectors get batches
        processor_class = SimpleSpanProcessor if self.use_console_exporters else BatchSpanProcessor
        self._processor = processor_class(self.exporter)
        self._provider = TracerProvider(resource=self.resource)
        self._provider.add_span_processor(self._processor)
        self._install_global(trace.set_tracer_provider, self._provider, 'tracer')
        self.tracer = self._provider.get_tracer(self.service_name, self.service_version)

    def get_span(self, name: str, attributes: AttrDict = None) -> RunSpan:
        span = self.tracer.start_span(name, attributes=attributes or {})
        return _LiveSpan(name, span, attributes=attributes)
