# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# attributes.py

import json, logging, platform, re
from typing import Any, Dict, Optional
from dataclasses import dataclass, field, fields
from .__version__ import __SDK_VERSION__, __REPORT_SCHEMA_VERSION__

_SERVICE_PATTERN = r"^[a-zA-Z0-9._-]{1,30}$"


def _host_name() -> str:
    from socket import gethostname
    return gethostname()


# attribute name -> probe used when the value was left empty
_HOST_PROBES = {
    'os_type': lambda: platform.system(),
    'os_version': lambda: platform.release(),
    'python_version': lambda: platform.python_version(),
    'hostname': _host_name,
}


@dataclass
class RunAttributes:
    """
    Resource attributes attached to every telemetry signal of a run. Field metadata
    carries the OpenTelemetry name of each attribute.

    Parameters:
        service_name (str): name of the service (enforced regex of ^[a-zA-Z0-9._-]{1,30}$), exported as service.name
        service_version (str): version of the service, exported as service.version
        experiment_name (str): experiment label from the configuration
        rule (str): aggregation rule name, or 'centralized'
        master_seed (int): master seed of the run
        rounds (int): number of federated rounds, 0 when unknown
        os_type, os_version, python_version, hostname (str): host description, probed when empty
        report_schema_version (str): version of the report schema. READONLY
        parameters (Dict[str, str]): any other attributes, set through set_attributes. READONLY
    """
    service_name: str = 'fedlesion'
    service_version: str = __SDK_VERSION__
    experiment_name: str = field(default='fedlesion', metadata={"otel_name": "experiment.name"})
    rule: str = field(default='fedavg', metadata={"otel_name": "federation.rule"})
    master_seed: int = field(default=0, metadata={"otel_name": "federation.master_seed"})
    rounds: int = field(default=0, metadata={"otel_name": "federation.rounds"})
    os_type: str = field(default="", metadata={"otel_name": "os.type"})
    os_version: str = field(default="", metadata={"otel_name": "os.version"})
    python_version: str = field(default="", metadata={"otel_name": "python.version"})
    hostname: str = field(default="", metadata={"otel_name": "hostname"})
    # Readonly
    report_schema_version: str = field(
        default=__REPORT_SCHEMA_VERSION__,
        init=False,
        metadata={"readonly": True, "otel_name": "report.schema.version"}
    )
    parameters: dict = field(
        default_factory=dict,
        init=False,
        metadata={"readonly": True, "otel_name": "parameters"}
    )

    def _rejection(self, key, value) -> Optional[str]:
        if value is None or key is None:
            return f"Either an attribute or key is None which is not allowed. Attribute: `{key}`. Value: `{value}`"
        if key in getattr(self, '_readonly_fields', ()):
            return f"Attempted overwrite of readonly attribute {key}"
        return None

    def __setattr__(self, key, value):
        reason = self._rejection(key, value)
        if reason is not None:
            logging.getLogger(__package__).warning(reason)
            return
        if key in ("service_name", "service_version") and re.match(_SERVICE_PATTERN, str(value)) is None:
            raise ValueError(f"{key} not set. {value} is invalid regex for this key: `{_SERVICE_PATTERN}`")
        super().__setattr__(key, value)

    def __post_init__(self):
        # init=False with a plain default stays on the class, set it on the instance
        super().__setattr__("report_schema_version", __REPORT_SCHEMA_VERSION__)
        self._readonly_fields = {f.name for f in fields(self) if f.metadata.get("readonly", False) is True}
        for name, probe in _HOST_PROBES.items():
            if not getattr(self, name):
                super().__setattr__(name, probe())

    @classmethod
    def for_run(cls, experiment_name: str, rule: str, master_seed: int, rounds: int = 0) -> 'RunAttributes':
        return cls(experiment_name=experiment_name, rule=rule, master_seed=int(master_seed), rounds=int(rounds))

    @classmethod
    def from_configuration(cls, config) -> 'RunAttributes':
        """Attributes of the run a Configuration describes."""
        return cls.for_run(config._get_experiment_name(), config._get_rule().get('name', ''),
                           config._get_master_seed(), config._get_rounds())

    def _get_attributes(self) -> Dict[str, Any]:
        """Convert all attributes to a dictionary"""
        return {k: v for k, v in self.__dict__.items() if k != '_readonly_fields'}

    def otel_attributes(self) -> Dict[str, Any]:
        """
        Attributes under their OpenTelemetry names, `parameters` serialized to JSON.
        service_name and service_version are left to the resource constructor.
        """
        values = self._get_attributes()
        values['parameters'] = json.dumps(values.get('parameters', {}), sort_keys=True)
        out: Dict[str, Any] = {}
        for attr in fields(self):
            if attr.name in ('service_name', 'service_version'):
                continue
            out[attr.metadata.get('otel_name', attr.name)] = values[attr.name]
        return out

    def set_attributes(self, **kwargs) -> 'RunAttributes':
        """
        Sets named attributes, unless readonly; any other name is stored in `parameters`.
        """
        for key, value in kwargs.items():
            if key in self.__dict__:
                setattr(self, key, value)
            else:
                self.parameters[str(key)] = str(value)
        return self
