# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# signals.py
"""
FedLesion - Telemetry Signals Module

This module provides logging, metrics and tracing (together called signals) of
simulator runs using OpenTelemetry. Telemetry is optional: unless a console
exporter or a collector endpoint is configured nothing is initialized, and every
function here is a no-op returning False. Telemetry never feeds back into the
numerical results.
"""

import logging, threading
from typing import Iterator, List, Optional
from contextlib import contextmanager

from opentelemetry.sdk._logs import LoggingHandler

from .config import Configuration as Config
from .attributes import RunAttributes as Attributes
from .formatting import AttrDict, EventPayload

from .common import TelemetryNotInitialized
from .logging import _FedLesionLogger
from .metrics import _FedLesionMetrics
from .tracing import _FedLesionTrace, RunSpan

_SIGNAL_TYPES = ('logging', 'metrics', 'tracing')

__FEDLESION_TELEMETRY_INITIALIZED = False
__SIGNALS: List[str] = []
_init_lock = threading.Lock()


def _not_initialized(what: str) -> bool:
    logging.getLogger(__package__).debug(f"Telemetry not initialized; skipping {what}.")
    return False


################################################################################
# Exposed APIs
def initialize_telemetry(config: Config,
                         attributes: Attributes = None,
                         signal_types: Optional[List[str]] = None) -> bool:
    """
    Initializes the telemetry system.

    Args:
        config (Configuration): The configuration. Telemetry is only started when it enables the console
            exporter or names a telemetry endpoint.
        attributes (RunAttributes, optional): Resource attributes; built from the configuration when None.
        signal_types (list, optional): Any of 'logging', 'metrics' and 'tracing'. Defaults to the
            configuration's telemetry_signals.

    Returns:
        bool: True if telemetry is running after the call.

    Raises:
        ValueError: If the config passed is None.
    """
    global __FEDLESION_TELEMETRY_INITIALIZED
    global __SIGNALS

    if config is None:
        raise ValueError("The config argument is required but was None")
    with _init_lock:
        if __FEDLESION_TELEMETRY_INITIALIZED is True:
            return True  # Already initialized
        if not config._telemetry_enabled():
            logging.getLogger(__package__).debug("No telemetry exporter configured; telemetry stays off.")
            return False
        if attributes is None:
            attributes = Attributes.from_configuration(config)
        if signal_types is None:
            signal_types = config._get_telemetry_signals()
        unknown = [s for s in signal_types if s not in _SIGNAL_TYPES]
        if unknown:
            logging.getLogger(__package__).warning(f"Unknown signal types {unknown} are ignored; expected {_SIGNAL_TYPES}.")

        init_params = (config, attributes)
        __SIGNALS = [s for s in signal_types if s in _SIGNAL_TYPES]
        if 'logging' in __SIGNALS:
            _FedLesionLogger._instance = _FedLesionLogger(*init_params)
        if 'metrics' in __SIGNALS:
            _FedLesionMetrics._instance = _FedLesionMetrics(*init_params)
        if 'tracing' in __SIGNALS:
            _FedLesionTrace._instance = _FedLesionTrace(*init_params)

        if not __SIGNALS:
            logging.getLogger(__package__).warning(
                "No signal types were initialized. Was this intended? If not please check "
                "'telemetry_signals' in the configuration."
            )
        __FEDLESION_TELEMETRY_INITIALIZED = True
        return True


def telemetry_initialized() -> bool:
    return __FEDLESION_TELEMETRY_INITIALIZED


def flush_telemetry() -> bool:
    """
    Force-flush every initialized provider. Returns True if all of them flushed.
    """
    if not __FEDLESION_TELEMETRY_INITIALIZED:
        return _not_initialized("flush")
    success = True
    for signal in (_FedLesionTrace, _FedLesionMetrics, _FedLesionLogger):
        instance = signal._instance
        if instance is None:
            continue
        try:
            if instance._provider.force_flush() is False:
                success = False
        except Exception:
            logging.getLogger(__package__).debug(f"{signal.__name__} flush failed", exc_info=True)
            success = False
    return success


def shutdown_telemetry() -> bool:
    """
    Flush and shut down every provider, then return to the uninitialized state so a later
    run may initialize telemetry again. Returns False if telemetry was never initialized.
    """
    global __FEDLESION_TELEMETRY_INITIALIZED
    global __SIGNALS
    with _init_lock:
        if not __FEDLESION_TELEMETRY_INITIALIZED:
            return _not_initialized("shutdown")
        flushed = flush_telemetry()
        for signal in (_FedLesionTrace, _FedLesionMetrics, _FedLesionLogger):
            instance = signal._instance
            if instance is None:
                continue
            try:
                instance._provider.shutdown()
            except Exception:
                logging.getLogger(__package__).debug(f"{signal.__name__} shutdown failed", exc_info=True)
                flushed = False
            signal._instance = None
        __SIGNALS = []
        __FEDLESION_TELEMETRY_INITIALIZED = False
        return flushed


def record_histogram(metric_name: str, value: float, attributes: AttrDict = {}) -> bool:
    """
    Records a histogram value (e.g. the pooled PRE of a round).

    Will catch any exceptions generated by metric usage.

    Args:
        metric_name (str): The name of the metric.
        value (float): The value to record.
        attributes (dict, optional): Additional attributes for the value. Defaults to {}.

    Returns:
        bool: True if the value was recorded, False otherwise.
    """
    if __FEDLESION_TELEMETRY_INITIALIZED is False or _FedLesionMetrics._instance is None:
        return _not_initialized(f"histogram '{metric_name}'")
    try:
        instance = _FedLesionMetrics._instance
        return instance.record_histogram(metric_name, value, instance._process_attributes(attributes))
    except TelemetryNotInitialized:
        logging.getLogger(__package__).warning("An attempt was made to record a histogram metric when metrics were not configured.")
        return False
    except Exception as e:
        logging.getLogger(__package__).error(f"UNCAUGHT EXCEPTION:\n{e}")
        return False


def increment_counter(counter_name: str, by: int = 1, attributes: AttrDict = {}) -> bool:
    """
    Increments a counter by abs(by).

    Returns:
        bool: True if the counter was incremented, False otherwise.
    """
    if __FEDLESION_TELEMETRY_INITIALIZED is False or _FedLesionMetrics._instance is None:
        return _not_initialized(f"counter '{counter_name}'")
    try:
        instance = _FedLesionMetrics._instance
        return instance.increment_counter(counter_name, by, instance._process_attributes(attributes))
    except TelemetryNotInitialized:
        logging.getLogger(__package__).warning("An attempt was made to change a counter metric when metrics were not configured.")
        return False
    except Exception as e:
        logging.getLogger(__package__).error(f"UNCAUGHT EXCEPTION:\n{e}")
        return False


@contextmanager
def get_trace(name: str, attributes: AttrDict = {}) -> Iterator[RunSpan]:
    """
    Open a named span for a with-block. Exceptions raised in the block are recorded on the
    span and re-raised.

    Example:
        with get_trace("federation_round", {"round": 3}) as span:
            span.add_event("aggregation", {"rule": "fedavg"})

    Returns:
        Iterator[RunSpan]: the span, or a no-op span when tracing is off.
    """
    if __FEDLESION_TELEMETRY_INITIALIZED is False or _FedLesionTrace._instance is None:
        _not_initialized(f"trace '{name}'")
        aspan = RunSpan(name)
    else:
        try:
            instance = _FedLesionTrace._instance
            aspan = instance.get_span(name, instance._process_attributes(attributes))
        except Exception:
            logging.getLogger(__package__).warning(f"Could not open span '{name}'; continuing without it.")
            aspan = RunSpan(name)
    try:
        yield aspan
    except Exception as e:
        aspan.add_exception(e)
        aspan.set_error_status()
        raise
    finally:
        aspan._close()


def get_telemetry_logger_handler() -> Optional[LoggingHandler]:
    """
    Returns the telemetry logger handler, or None when the 'logging' signal is off. Insert it
    into the package logger to export developer logs:

        logging.getLogger("fedlesion").addHandler(get_telemetry_logger_handler())
    """
    if __FEDLESION_TELEMETRY_INITIALIZED is False or _FedLesionLogger._instance is None:
        _not_initialized("logger handler")
        return None
    return _FedLesionLogger._instance._get_log_handler()


def send_event(body: EventPayload, event_name: str, attributes: AttrDict = {}) -> bool:
    """
    Sends a log event directly to the OpenTelemetry pipeline without using Python's logging module.

    Params:
        body (str | dict): the event body; dictionaries are sent as JSON
        event_name (str): mandatory event name added to attributes
        attributes (AttrDict): optional attributes dict
    Returns:
        bool: True if the event was sent, False if logging telemetry is off
    """
    if __FEDLESION_TELEMETRY_INITIALIZED is False or _FedLesionLogger._instance is None:
        return _not_initialized(f"event '{event_name}'")
    instance = _FedLesionLogger._instance
    instance._get_event_logger()._send_event(body, event_name, instance._process_attributes(attributes))
    return True
