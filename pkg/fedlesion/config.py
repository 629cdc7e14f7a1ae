# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# config.py
"""
FedLesion - Configuration Module

This module provides the experiment settings from a YAML file, a dictionary and
the environment (in that order of precedence), and builds the typed
FederationConfig consumed by the orchestrator.
"""

from typing import Dict, Any, List, Optional
from dataclasses import fields, replace
import copy, logging, os, re

import yaml

from .common import ConfigurationError
from .formatting import LOG_LEVELS
from .trainer import DESK_EPOCHS_PER_ROUND, FULL_EPOCHS_PER_ROUND

"""
Configuration class holding the settings of one federated experiment.
Telemetry settings live next to the experiment settings so one file drives a run.
"""

_TRUE_VALUES = ['true', 'yes', '1', 'on']


PRESETS: Dict[str, Dict[str, Any]] = {
    'desk': {'epochs_per_round': DESK_EPOCHS_PER_ROUND},
    'full': {'epochs_per_round': FULL_EPOCHS_PER_ROUND},
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class Configuration:
    """
    Experiment configuration. For environment variables make the base name upper case and
    prepend 'FEDL\\_'. For example, the number of rounds is read from 'FEDL_ROUNDS' and the
    aggregation rule name from 'FEDL_RULE'. The bool values can be represented by "1", "yes",
    "true" or "on" case-insensitive and all other values are considered False.

    - ROUNDS_NAME - Number of federated rounds.
    - EVAL_EVERY_NAME - Evaluate the federated model every this many rounds (the last round is always evaluated).
    - MASTER_SEED_NAME - Seed every center stream and the initial model are derived from.
    - WORKERS_NAME - Thread pool size for local trainings and evaluation. Never changes results.
    - PER_CENTER_INIT_NAME - Seed every large center's initial model independently and aggregate them before round 1.
    - PRESET_NAME - 'desk' (3 epochs per round) or 'full' (20 epochs per round).
    - RULE_NAME - Aggregation rule, a name or a mapping {name, beta, mu}.
    - TRAIN_NAME - Mapping {epochs_per_round, batch_size, learning_rate, mu}.
    - MODEL_NAME - Mapping {layers, dice_weight, threshold, activation}.
    - EVALUATION_NAME - Mapping {connectivity, min_overlap}.
    - FEDERATION_NAME - Mapping {preset, image_size, centers}; centers override preset profiles by center_id.
    - OUTPUT_DIR_NAME - Directory for reports and checkpoints.
    - EXPERIMENT_NAME_NAME - Label stored in reports and telemetry resources.
    - LOGGING_LEVEL_NAME - Level of the package logger (and of the telemetry log handler).
    - USE_CONSOLE_EXPORTER_NAME - Export telemetry to the console.
    - TELEMETRY_ENDPOINT_NAME - OTLP collector endpoint; http(s) or grpc(s) scheme.
    - TELEMETRY_AUTH_TOKEN_NAME - Bearer token for the collector.
    - TELEMETRY_SIGNALS_NAME - Signals to initialize: any of 'logging', 'metrics', 'tracing'.
    - METRICS_EXPORT_INTERVAL_MS_NAME - Metrics export interval in milliseconds.

    config = Configuration(config_file='experiment.yaml').set_rule('softmax').set_rounds(5)

    Args:
        config_dict (Dict[str,Any], optional): settings that override the file.
        config_file (str, optional): YAML file with the settings.
    """
    __PREFIX__ = 'FEDL_'

    ROUNDS_NAME                     = 'rounds'
    EVAL_EVERY_NAME                 = 'eval_every'
    MASTER_SEED_NAME                = 'master_seed'
    WORKERS_NAME                    = 'workers'
    PER_CENTER_INIT_NAME            = 'per_center_init'
    PRESET_NAME                     = 'preset'
    RULE_NAME                       = 'rule'
    TRAIN_NAME                      = 'train'
    MODEL_NAME                      = 'model'
    EVALUATION_NAME                 = 'evaluation'
    FEDERATION_NAME                 = 'federation'
    OUTPUT_DIR_NAME                 = 'output_dir'
    EXPERIMENT_NAME_NAME            = 'experiment_name'
    LOGGING_LEVEL_NAME              = 'logging_level'
    USE_CONSOLE_EXPORTER_NAME       = 'use_console_exporter'
    TELEMETRY_ENDPOINT_NAME         = 'telemetry_endpoint'
    TELEMETRY_AUTH_TOKEN_NAME       = 'telemetry_auth_token'
    TELEMETRY_SIGNALS_NAME          = 'telemetry_signals'
    METRICS_EXPORT_INTERVAL_MS_NAME = 'metrics_export_interval_ms'

    _base_names: List[str] = [
        ROUNDS_NAME,
        EVAL_EVERY_NAME,
        MASTER_SEED_NAME,
        WORKERS_NAME,
        PER_CENTER_INIT_NAME,
        PRESET_NAME,
        RULE_NAME,
        OUTPUT_DIR_NAME,
        EXPERIMENT_NAME_NAME,
        LOGGING_LEVEL_NAME,
        USE_CONSOLE_EXPORTER_NAME,
        TELEMETRY_ENDPOINT_NAME,
        TELEMETRY_AUTH_TOKEN_NAME,
        TELEMETRY_SIGNALS_NAME,
        METRICS_EXPORT_INTERVAL_MS_NAME,
    ]

    _bool_value_names: List[str] = [
        PER_CENTER_INIT_NAME,
        USE_CONSOLE_EXPORTER_NAME,
    ]

    _int_value_names: List[str] = [
        ROUNDS_NAME,
        EVAL_EVERY_NAME,
        MASTER_SEED_NAME,
        WORKERS_NAME,
        METRICS_EXPORT_INTERVAL_MS_NAME,
    ]

    _defaults: Dict[str, Any] = {
        ROUNDS_NAME: 30,
        EVAL_EVERY_NAME: 1,
        MASTER_SEED_NAME: 2024,
        WORKERS_NAME: 1,
        PER_CENTER_INIT_NAME: False,
        RULE_NAME: {'name': 'fedavg', 'beta': 0.999, 'mu': 0.01},
        TRAIN_NAME: {'batch_size': 4, 'learning_rate': 0.5, 'mu': 0.01},
        MODEL_NAME: {'layers': [[2, 8, 3], [8, 8, 3], [8, 1, 1]], 'dice_weight': 0.5,
                     'threshold': 0.5, 'activation': 'tanh'},
        EVALUATION_NAME: {'connectivity': 8, 'min_overlap': 0.0},
        FEDERATION_NAME: {'preset': 'desk', 'image_size': [32, 32], 'centers': []},
        EXPERIMENT_NAME_NAME: 'fedlesion',
        LOGGING_LEVEL_NAME: 'warning',
        USE_CONSOLE_EXPORTER_NAME: False,
        TELEMETRY_SIGNALS_NAME: ['tracing', 'metrics'],
    }

    def __init__(self, config_dict: Dict[str, Any] = {}, config_file: Optional[str] = None):
        """
        Creates the configuration object passed to build() and initialize_telemetry().

        Args:
            config_dict (Dict[str,any]): An initialization map to configure the object in bulk or {}.
            config_file (str): Path of a YAML file or None.

        Raises:
            ConfigurationError: the file cannot be parsed, or a non integer value is set for an integer
                setting such as `FEDL_ROUNDS`.
            ConfigurationError: the telemetry endpoint is malformed.
        """
        self._config: Dict[str, Any] = copy.deepcopy(self._defaults)

        if config_file is not None:
            self._config = _deep_merge(self._config, self._load_file(config_file))
        self._config = _deep_merge(self._config, self._normalize_rule(copy.deepcopy(config_dict)))

        # Merge environment variables into the config
        for base_name in self._base_names:
            env_name = f"{self.__PREFIX__}{base_name.upper()}"
            env_value = os.environ.get(env_name, None)
            if env_value is not None:
                if base_name == self.RULE_NAME:
                    self._config[self.RULE_NAME] = _deep_merge(self._config[self.RULE_NAME], {'name': env_value.strip()})
                elif base_name == self.TELEMETRY_SIGNALS_NAME:
                    self._config[base_name] = [s.strip() for s in env_value.split(',') if s.strip()]
                else:
                    self._config[base_name] = env_value.strip()

        # top level preset is a shorthand for federation.preset
        if self.PRESET_NAME in self._config:
            self._config[self.FEDERATION_NAME]['preset'] = str(self._config.pop(self.PRESET_NAME)).lower().strip()

        # Normalize bool values
        for bool_name in self._bool_value_names:
            if bool_name in self._config and isinstance(self._config[bool_name], str):
                self._config[bool_name] = self._config[bool_name].lower().strip() in _TRUE_VALUES

        # Normalize the int values
        for int_name in self._int_value_names:
            if int_name in self._config and isinstance(self._config[int_name], str):
                try:
                    self._config[int_name] = int(self._config[int_name].strip())
                except ValueError:
                    raise ConfigurationError(f"Invalid value for '{int_name}': {self._config[int_name]}")

        self._endpoint: Optional[Configuration._Endpoint] = None
        if self._config.get(self.TELEMETRY_ENDPOINT_NAME):
            self._endpoint = self._Endpoint(self._config[self.TELEMETRY_ENDPOINT_NAME])
            self._config[self.TELEMETRY_ENDPOINT_NAME] = self._endpoint.url

    def _load_file(self, config_file: str) -> Dict[str, Any]:
        try:
            with open(config_file, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Cannot read configuration file '{config_file}': {e}")
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"Configuration file '{config_file}' must hold a mapping at the top level.")
        logging.getLogger(__package__).debug(f"Loaded configuration file '{config_file}'")
        return self._normalize_rule(loaded)

    def _normalize_rule(self, values: Dict[str, Any]) -> Dict[str, Any]:
        # 'rule: softmax' is shorthand for 'rule: {name: softmax}'
        if isinstance(values.get(self.RULE_NAME), str):
            values[self.RULE_NAME] = {'name': values[self.RULE_NAME]}
        return values

    def set_rounds(self, rounds: int):
        """
        Sets the number of federated rounds. If passed in a dict in the constructor, use predefined
        name ROUNDS_NAME.

        Args:
            rounds (int): Number of rounds. If this is zero or negative the value is not set.

        Returns:
            Self
        """
        if rounds < 1:
            return self
        self._config[self.ROUNDS_NAME] = int(rounds)
        return self

    def set_eval_every(self, eval_every: int):
        if eval_every < 1:
            return self
        self._config[self.EVAL_EVERY_NAME] = int(eval_every)
        return self

    def set_master_seed(self, seed: int):
        """
        Sets the master seed. Center streams, the initial model and training shuffles are all derived
        from it. If passed in a dict in the constructor, use predefined name MASTER_SEED_NAME.

        Args:
            seed (int): Unsigned seed. Negative values are ignored.

        Returns:
            Self
        """
        if seed < 0:
            return self
        self._config[self.MASTER_SEED_NAME] = int(seed)
        return self

    def set_workers(self, workers: int):
        if workers < 1:
            return self
        self._config[self.WORKERS_NAME] = int(workers)
        return self

    def set_per_center_init(self, value: bool = True):
        self._config[self.PER_CENTER_INIT_NAME] = value
        return self

    def set_preset(self, preset: str):
        """
        Selects the training schedule preset: 'desk' or 'full'. Unknown names are ignored.

        Returns:
            Self
        """
        preset = str(preset).lower().strip()
        if preset not in PRESETS:
            return self
        self._config[self.FEDERATION_NAME]['preset'] = preset
        return self

    def set_rule(self, name: str, beta: Optional[float] = None, mu: Optional[float] = None):
        """
        Sets the aggregation rule. The name is validated when build() is called. If passed in a dict
        in the constructor, use predefined name RULE_NAME.

        Args:
            name (str): 'fedavg', 'vanillaavg', 'beta', 'softmax' or 'fedprox'.
            beta (float): Beta of the beta weighting rule or None to keep the current value.
            mu (float): Proximal coefficient of the fedprox rule or None to keep the current value.

        Returns:
            Self
        """
        rule = self._config[self.RULE_NAME]
        rule['name'] = name
        if beta is not None:
            rule['beta'] = beta
        if mu is not None:
            rule['mu'] = mu
        return self

    def set_train_option(self, key: str, value: Any):
        self._config[self.TRAIN_NAME][key] = value
        return self

    def set_model_option(self, key: str, value: Any):
        self._config[self.MODEL_NAME][key] = value
        return self

    def set_output_dir(self, output_dir: str):
        self._config[self.OUTPUT_DIR_NAME] = str(output_dir)
        return self

    def set_experiment_name(self, name: str):
        self._config[self.EXPERIMENT_NAME_NAME] = name
        return self

    def set_logging_level(self, level: str):
        """
        Sets the logging level of the package logger and of the telemetry log handler. If passed in
        a dict in the constructor, use predefined name LOGGING_LEVEL_NAME.

        Args:
            level (str): Logging level to be used. It can be 'debug', 'info', 'warn', 'warning', 'error', 'fatal' or 'critical'. If not one of these strings, the logger level is not set.

        Returns:
            Self
        """
        if level not in LOG_LEVELS:
            return self
        self._config[self.LOGGING_LEVEL_NAME] = level
        return self

    def set_console_exporter(self, use_console: bool = True):
        """
        Sets whether telemetry is exported to the console. This is a convenience used for local
        inspection. The environment variable is 'FEDL_USE_CONSOLE_EXPORTER'.

        Args:
            use_console (bool): True to use console exporter, False otherwise.

        Returns:
            Self
        """
        self._config[self.USE_CONSOLE_EXPORTER_NAME] = use_console
        return self

    def set_telemetry_endpoint(self, endpoint: str, auth_token: str = None):
        """
        Sets the OTLP collector endpoint. The scheme selects the exporter: http(s) or grpc(s).

        Args:
            endpoint (str): Endpoint in the form '<scheme>://<IPv4|domain_name>[:<port>][/path]'.
            auth_token (str): Bearer auth token for the endpoint or None.

        Returns:
            Self

        Raises:
            ConfigurationError: If the endpoint format is invalid.
        """
        self._endpoint = self._Endpoint(endpoint)
        self._config[self.TELEMETRY_ENDPOINT_NAME] = self._endpoint.url
        if auth_token is not None:
            self._config[self.TELEMETRY_AUTH_TOKEN_NAME] = auth_token
        return self

    def set_telemetry_signals(self, signals: List[str]):
        self._config[self.TELEMETRY_SIGNALS_NAME] = list(signals)
        return self

    def set_metrics_export_interval_ms(self, interval_ms: int):
        """
        Sets the metrics export interval in milliseconds (default 60,000).

        Args:
            interval_ms (int): Interval in milliseconds. If this is zero or negative the value is not set.

        Returns:
            Self
        """
        if interval_ms <= 0:
            return self
        self._config[self.METRICS_EXPORT_INTERVAL_MS_NAME] = interval_ms
        return self

    class _Endpoint:
        def __init__(self, endpoint: str):
            # Properties:
            # - protocol - http, https, grpc or grpcs
            # - host - host of the endpoint passed to the constructor
            # - port - port of the endpoint or None
            # - path - path of the endpoint passed to the constructor
            # - tls - whether the scheme asks for TLS
            self._parse_endpoint(str(endpoint).strip())

        def _parse_endpoint(self, url: str):
            self._validate_endpoint(url)
            if self.port is not None and self.port not in (80, 443) and not (1024 <= self.port <= 65535):
                raise ConfigurationError(f"Invalid endpoint format: {url}")
            url = f"{self.protocol}://{self.host}"
            if self.port:
                url += f":{self.port}"
            url += self.path
            self.url = url

        def _validate_endpoint(self, endpoint: str):
            if endpoint == '':
                raise ConfigurationError(f"Invalid endpoint format: {endpoint}")
            pattern = re.compile(
                r"^"
                r"(https?://|grpcs?://)"                       # capture group 1: protocol
                r"("                                           # capture group 2: host
                    r"(?!0\.)"                                 # Disallow IPs starting with 0.
                    r"(?:\d{1,3}\.){3}\d{1,3}"                 # IPv4 format (non-capturing group)
                    r"|"
                    r"(?:[a-zA-Z0-9]+(?:-[a-zA-Z0-9]+)*"       # domain segment
                    r"(?:\.[a-zA-Z0-9]+(?:-[a-zA-Z0-9]+)*)*)"  # more segments
                r")"
                r"(?::(\d{1,5}))?"                             # capture group 3: optional port
                r"(/.*)?$"                                     # capture group 4: optional path
            )
            match = pattern.match(endpoint)
            if not match:
                raise ConfigurationError(f"Invalid endpoint format: {endpoint}")

            self.host = match.group(2)
            port = match.group(3)
            self.port = int(port) if port is not None else None
            self.path = match.group(4) or ""
            self.protocol = match.group(1)[:-3]
            self.tls = self.protocol.endswith('s')

            if re.match(r"^(\d{1,3}\.)+\d{1,3}$", self.host):
                quads = list(map(int, self.host.split('.')))
                if len(quads) != 4:
                    raise ConfigurationError(f"Invalid endpoint format: {endpoint}")
                if quads[0] in (0, 255) or quads[3] in (0, 255) or any(q > 255 for q in quads):
                    raise ConfigurationError(f"Invalid endpoint format: {endpoint}")

    # Getters for configuration settings (internal only for the package)
    def _get_rounds(self) -> int:
        return self._config[self.ROUNDS_NAME]

    def _get_eval_every(self) -> int:
        return self._config[self.EVAL_EVERY_NAME]

    def _get_master_seed(self) -> int:
        return self._config[self.MASTER_SEED_NAME]

    def _get_workers(self) -> int:
        return self._config[self.WORKERS_NAME]

    def _get_per_center_init(self) -> bool:
        return bool(self._config[self.PER_CENTER_INIT_NAME])

    def _get_preset(self) -> str:
        return str(self._config[self.FEDERATION_NAME].get('preset', 'desk')).lower()

    def _get_rule(self) -> Dict[str, Any]:
        return dict(self._config[self.RULE_NAME])

    def _get_output_dir(self) -> Optional[str]:
        return self._config.get(self.OUTPUT_DIR_NAME, None)

    def _get_experiment_name(self) -> str:
        return str(self._config[self.EXPERIMENT_NAME_NAME])

    def _get_logging_level(self) -> str:
        return self._config.get(self.LOGGING_LEVEL_NAME, 'warning')

    def _get_console_exporter(self) -> bool:
        return self._config.get(self.USE_CONSOLE_EXPORTER_NAME, False)

    def _get_telemetry_endpoint(self) -> Optional[str]:
        return self._config.get(self.TELEMETRY_ENDPOINT_NAME, None)

    def _get_telemetry_auth_token(self) -> Optional[str]:
        return self._config.get(self.TELEMETRY_AUTH_TOKEN_NAME, None)

    def _get_telemetry_signals(self) -> List[str]:
        return list(self._config.get(self.TELEMETRY_SIGNALS_NAME, []))

    def _get_metrics_export_interval_ms(self) -> int:
        return self._config.get(self.METRICS_EXPORT_INTERVAL_MS_NAME, 60_000)

    def _get_request_protocol(self) -> Optional[str]:
        return self._endpoint.protocol if self._endpoint is not None else None

    def _get_TLS(self) -> bool:
        return self._endpoint.tls if self._endpoint is not None else False

    def _get_signal_endpoint(self, signal: str) -> Optional[str]:
        # OTLP/HTTP wants one path per signal; gRPC takes the bare endpoint
        endpoint = self._get_telemetry_endpoint()
        if endpoint is None or endpoint.lower().startswith("grpc"):
            return endpoint
        endpoint_str = f"v1/{signal}"
        if endpoint.endswith(endpoint_str):
            return endpoint
        return endpoint + (endpoint_str if endpoint.endswith("/") else "/" + endpoint_str)

    def _telemetry_enabled(self) -> bool:
        return bool(self._get_console_exporter()) or self._get_telemetry_endpoint() is not None

    def to_dict(self) -> Dict[str, Any]:
        """
        The effective settings; the auth token is masked.
        """
        out = copy.deepcopy(self._config)
        if out.get(self.TELEMETRY_AUTH_TOKEN_NAME):
            out[self.TELEMETRY_AUTH_TOKEN_NAME] = '***'
        return out

    def build(self):
        """
        Validate the settings and produce the immutable experiment configuration.

        Returns:
            FederationConfig

        Raises:
            ConfigurationError: for unknown presets, center overrides or out-of-range values.
            InvalidRuleError: for an unknown rule name or out-of-range beta/mu.
        """
        from .aggregation import AggregationRule
        from .evaluation import EvaluationConfig
        from .orchestrator import FederationConfig
        from .segmodel import ModelConfig
        from .synthdata import CenterProfile, default_federation
        from .trainer import TrainConfig

        preset = self._get_preset()
        if preset not in PRESETS:
            raise ConfigurationError(f"Unknown preset '{preset}', expected one of {sorted(PRESETS)}")
        federation = self._config[self.FEDERATION_NAME]
        try:
            image_size = tuple(int(v) for v in federation.get('image_size', (32, 32)))
        except (TypeError, ValueError):
            raise ConfigurationError(f"Invalid image_size: {federation.get('image_size')}")
        master_seed = self._get_master_seed()
        if master_seed < 0:
            raise ConfigurationError(f"Invalid value for '{self.MASTER_SEED_NAME}': {master_seed}")

        centers = default_federation(master_seed, image_size)
        by_id = {p.center_id: p for p in centers}
        profile_fields = {f.name for f in fields(CenterProfile)}
        for override in federation.get('centers') or []:
            if not isinstance(override, dict) or 'center_id' not in override:
                raise ConfigurationError(f"Every center override needs a 'center_id': {override}")
            unknown = set(override) - profile_fields
            if unknown:
                raise ConfigurationError(f"Unknown center fields {sorted(unknown)} for center {override['center_id']}")
            values = {k: (tuple(v) if isinstance(v, list) else v) for k, v in override.items()}
            try:
                center_id = int(values['center_id'])
            except (TypeError, ValueError):
                raise ConfigurationError(f"Invalid center_id: {values['center_id']}")
            try:
                if center_id in by_id:
                    by_id[center_id] = replace(by_id[center_id], **values)
                else:
                    values.setdefault('image_size', image_size)
                    by_id[center_id] = CenterProfile(**values)
            except (TypeError, ValueError) as e:
                raise ConfigurationError(f"Invalid override for center {center_id}: {e}")

        train = dict(self._config[self.TRAIN_NAME])
        train.setdefault('epochs_per_round', PRESETS[preset]['epochs_per_round'])
        model = dict(self._config[self.MODEL_NAME])
        model['layers'] = tuple(tuple(layer) for layer in model.get('layers', ()))
        try:
            rule = AggregationRule(**self._get_rule())
        except TypeError as e:
            raise ConfigurationError(f"Invalid rule section: {e}")
        try:
            train_config = TrainConfig(**train)
            model_config = ModelConfig(**model)
            evaluation = EvaluationConfig(**self._config[self.EVALUATION_NAME])
        except TypeError as e:
            raise ConfigurationError(f"Invalid configuration section: {e}")
        except ValueError as e:
            raise ConfigurationError(str(e))

        return FederationConfig(
            rounds=self._get_rounds(),
            rule=rule,
            train=train_config,
            model=model_config,
            centers=[by_id[k] for k in sorted(by_id)],
            master_seed=master_seed,
            eval_every=self._get_eval_every(),
            evaluation=evaluation,
            per_center_init=self._get_per_center_init(),
            workers=self._get_workers(),
            experiment_name=self._get_experiment_name(),
            checkpoint_dir=self._get_output_dir(),
        )
