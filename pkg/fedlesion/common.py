# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# common.py
"""
FedLesion - Common base class, exceptions and digests.
"""

import hashlib, importlib, json, logging
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from opentelemetry.sdk.resources import Resource, SERVICE_NAME, SERVICE_VERSION


class FedLesionError(Exception):
    pass


class LayoutMismatchError(FedLesionError, ValueError):
    pass


class InvalidWeightsError(FedLesionError, ValueError):
    pass


class InvalidParameterSetError(FedLesionError, ValueError):
    pass


class InfeasibleLesionError(FedLesionError, RuntimeError):
    pass


class EmptySplitError(FedLesionError, ValueError):
    pass


class EmptyBatchError(FedLesionError, ValueError):
    pass


class EmptyDatasetError(FedLesionError, ValueError):
    pass


class EmptyCohortError(FedLesionError, ValueError):
    pass


class DimensionMismatchError(FedLesionError, ValueError):
    pass


class InvalidRuleError(FedLesionError, ValueError):
    pass


class ConfigurationError(FedLesionError, ValueError):
    pass


class CheckpointFormatError(FedLesionError, ValueError):
    pass


class RasterFormatError(FedLesionError, ValueError):
    pass


class ReportFormatError(FedLesionError, ValueError):
    pass


class TelemetryNotInitialized(FedLesionError, RuntimeError):
    pass


def array_digest(*arrays: np.ndarray) -> str:
    # SHA-256 over dtype, shape and little-endian bytes of each array, in order
    hasher = hashlib.sha256()
    for array in arrays:
        data = np.ascontiguousarray(array)
        if data.dtype.kind == 'f':
            data = data.astype('<f8', copy=False)
        elif data.dtype.kind == 'b':
            data = data.astype('u1', copy=False)
        hasher.update(f"{data.dtype.str}|{data.shape}|".encode("utf-8"))
        hasher.update(data.tobytes())
    return hasher.hexdigest()


def json_digest(payload: Any) -> str:
    # Canonical JSON: sorted keys, no whitespace, floats via repr
    combined = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(combined.encode("utf-8")).hexdigest()


# (signal, transport) -> module and class of the OTLP exporter; imported on first use
_OTLP_EXPORTERS: Dict[Tuple[str, str], Tuple[str, str]] = {
    ('traces', 'grpc'): ('opentelemetry.exporter.otlp.proto.grpc.trace_exporter', 'OTLPSpanExporter'),
    ('traces', 'http'): ('opentelemetry.exporter.otlp.proto.http.trace_exporter', 'OTLPSpanExporter'),
    ('metrics', 'grpc'): ('opentelemetry.exporter.otlp.proto.grpc.metric_exporter', 'OTLPMetricExporter'),
    ('metrics', 'http'): ('opentelemetry.exporter.otlp.proto.http.metric_exporter', 'OTLPMetricExporter'),
    ('logs', 'grpc'): ('opentelemetry.exporter.otlp.proto.grpc._log_exporter', 'OTLPLogExporter'),
    ('logs', 'http'): ('opentelemetry.exporter.otlp.proto.http._log_exporter', 'OTLPLogExporter'),
}


class _FedLesionCommon:
    # Base class for common attributes and methods of the telemetry signals (internal only)
    def __init__(self, config, attributes):
        self._config = config
        self._console_exporter: Any = None
        self.logger = logging.getLogger(__package__)
        self.service_name = attributes.service_name
        self.service_version = attributes.service_version
        self._run_id = self._hash_run_id(attributes.experiment_name, attributes.master_seed, attributes.rule)
        self.resource = self.make_otel_resource(attributes)

        self.telemetry_endpoint = config._get_telemetry_endpoint()
        self.use_console_exporters = config._get_console_exporter()

    def make_otel_resource(self, attributes) -> Resource:
        resource_attributes: Dict[str, Any] = {SERVICE_NAME: self.service_name, SERVICE_VERSION: self.service_version}
        resource_attributes.update(attributes.otel_attributes())
        resource_attributes['run.id'] = self._run_id
        return Resource.create(resource_attributes)

    def _hash_run_id(self, experiment_name: str, master_seed, rule: str) -> str:
        # Same experiment, seed and rule always map to the same run id
        if master_seed is None:
            raise KeyError("The master seed is required to identify a run.")
        combined = f"{experiment_name}|{master_seed}|{rule}|{self.service_name}"
        return hashlib.sha256(combined.encode("utf-8")).hexdigest()

    def _process_attributes(self, attributes: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        # OTel attribute values must be primitives or sequences of primitives
        if attributes is None:
            return {}
        if not isinstance(attributes, dict) or any(not isinstance(key, str) or not key for key in attributes):
            self.logger.error(f"Attributes `{attributes}` are not a dictionary with non empty str keys. They will be dropped.")
            return {}
        return {k: (v if isinstance(v, (str, bool, int, float)) else str(v)) for k, v in attributes.items()}

    def _auth_headers(self) -> Dict[str, str]:
        headers: Dict[str, str] = {}
        auth_token = self._config._get_telemetry_auth_token()
        if auth_token is not None:
            headers['authorization'] = f'Bearer {auth_token}'
        return headers

    def _make_exporter(self, signal: str, console_factory: Callable[[], Any], **options) -> Any:
        """
        The console exporter when configured, otherwise the OTLP exporter of `signal`
        ('traces', 'metrics' or 'logs') for the endpoint's transport.
        """
        if self.use_console_exporters:
            self._console_exporter = console_factory()
            return self._console_exporter
        transport = 'grpc' if self._config._get_request_protocol() in ('grpc', 'grpcs') else 'http'
        module_name, class_name = _OTLP_EXPORTERS[(signal, transport)]
        exporter_class = getattr(importlib.import_module(module_name), class_name)
        options.update(endpoint=self._config._get_signal_endpoint(signal), headers=self._auth_headers())
        if transport == 'grpc':
            options['insecure'] = not self._config._get_TLS()
        return exporter_class(**options)

    def _install_global(self, setter: Callable[[Any], None], provider: Any, kind: str):
        # Our provider is used directly either way; the global one is only a convenience
        try:
            setter(provider)
        except Exception:
            self.logger.warning(f"The global {kind} provider was previously set and is left in place.")

    def _test_set_console_mock(self, new_out):  # For testing only...
        if self._console_exporter is not None and new_out is not None:
            saved = self._console_exporter.out
            self._console_exporter.out = new_out
            return saved
        return None
