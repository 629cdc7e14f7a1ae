# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# metrics.py
"""
FedLesion - Metrics signal class (OpenTelemetry counters and histograms).

Not to be confused with the segmentation metrics in evaluation.py.
"""

import re
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

from opentelemetry import metrics
from opentelemetry.sdk.metrics import MeterProvider, Counter, Histogram
from opentelemetry.sdk.metrics.export import PeriodicExportingMetricReader, ConsoleMetricExporter, AggregationTemporality

from .common import _FedLesionCommon, TelemetryNotInitialized
from .config import Configuration as Config
from .attributes import RunAttributes as Attributes
from .formatting import AttrDict

_METRIC_NAME_PATTERN = r"^[A-Za-z][A-Za-z_0-9]+$"
_KINDS = ('counter', 'histogram')


@dataclass(frozen=True)
class InstrumentSpec:
    kind: str
    unit: str
    description: str


# Instruments the orchestrator records; other valid names get a generic spec
FEDERATION_INSTRUMENTS: Dict[str, InstrumentSpec] = {
    'round_pre': InstrumentSpec('histogram', '1', 'Mean patient relative error of an evaluated round, per pool.'),
    'kappa_weight': InstrumentSpec('histogram', '1', 'Aggregation weight of each large center.'),
    'local_trainings': InstrumentSpec('counter', '{training}', 'Local trainings run by the centers.'),
    'rounds_completed': InstrumentSpec('counter', '{round}', 'Rounds completed by a run.'),
}


class _FedLesionMetrics(_FedLesionCommon):
    # Singleton instance (internal only); provide a single instance of the metrics class
    _instance = None

    _temporality: Dict[type, AggregationTemporality] = {
        Counter: AggregationTemporality.DELTA,
        Histogram: AggregationTemporality.CUMULATIVE,
    }

    def __init__(self, config: Config, attributes: Attributes):
        super().__init__(config, attributes)
        self._instruments: Dict[str, Tuple[str, Any]] = {}

        self.exporter = self._make_exporter(
            'metrics', lambda: ConsoleMetricExporter(preferred_temporality=self._temporality),
            preferred_temporality=self._temporality,
        )
        self.metric_reader = PeriodicExportingMetricReader(
            self.exporter, export_interval_millis=config._get_metrics_export_interval_ms())
        self._provider = MeterProvider(resource=self.resource, metric_readers=[self.metric_reader])
        self._install_global(metrics.set_meter_provider, self._provider, 'meter')
        self.meter = self._provider.get_meter(self.service_name, self.service_version)

    def _spec(self, name: str, kind: str) -> Optional[InstrumentSpec]:
        spec = FEDERATION_INSTRUMENTS.get(name)
        if spec is None:
            if not re.fullmatch(_METRIC_NAME_PATTERN, name):
                self.logger.warning(f"Metric {name} does not match valid regex: r\"{_METRIC_NAME_PATTERN}\"")
                return None
            return InstrumentSpec(kind, '1', 'Recorded by the federation simulator.')
        if spec.kind != kind:
            self.logger.warning(f"Metric '{name}' is a {spec.kind}, not a {kind}.")
            return None
        return spec

    def _instrument(self, name: str, kind: str) -> Any:
        if kind not in _KINDS:
            raise TelemetryNotInitialized(f"Metric type '{kind}' is unknown!")
        known = self._instruments.get(name)
        if known is not None:
            if known[0] != kind:
                self.logger.warning(f"Metric '{name}' is a {known[0]}, not a {kind}.")
                return None
            return known[1]
        spec = self._spec(name, kind)
        if spec is None:
            return None
        create = self.meter.create_counter if kind == 'counter' else self.meter.create_histogram
        instrument = create(name, unit=spec.unit, description=spec.description)
        self._instruments[name] = (kind, instrument)
        return instrument

    def record_histogram(self, metric_name: str, value: float, attributes: AttrDict = {}) -> bool:
        histogram = self._instrument(metric_name, 'histogram')
        if histogram is None:
            self.logger.error(f"Metric '{metric_name}' failed to be created.")
            return False
        histogram.record(value, attributes)
        return True

    def increment_counter(self, counter_name: str, by: int = 1, attributes: AttrDict = {}) -> bool:
        # abs(by) is used; counters only go up
        counter = self._instrument(counter_name, 'counter')
        if counter is None:
            self.logger.error(f"Metric '{counter_name}' failed to be created.")
            return False
        counter.add(abs(by), attributes)
        return True
