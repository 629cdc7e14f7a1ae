# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# aggregation.py
"""
FedLesion - Aggregation Module

Server-side fusion of client models: each rule maps the clients' training-set
sizes to convex weights kappa, and the federated model is the kappa-weighted
sum of the client parameter sets.
"""

import logging, math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .common import InvalidRuleError
from .formatting import RULE_NAMES
from .params import ParameterSet, weighted_sum

logger = logging.getLogger(__package__)

DEFAULT_BETA = 0.999
DEFAULT_MU = 0.01


@dataclass(frozen=True)
class AggregationRule:
    """
    One of the five aggregation rules.

    Parameters:
        name (str): 'fedavg', 'vanillaavg', 'beta', 'softmax' or 'fedprox'.
        beta (float): only read by 'beta'; must lie in [0, 1).
        mu (float): only read by 'fedprox'; proximal coefficient, >= 0.
    """
    name: str = 'fedavg'
    beta: float = DEFAULT_BETA
    mu: float = DEFAULT_MU

    def __post_init__(self):
        object.__setattr__(self, 'name', str(self.name).lower().strip())
        if self.name not in RULE_NAMES:
            raise InvalidRuleError(f"Unknown aggregation rule '{self.name}', expected one of {RULE_NAMES}")
        if not (0.0 <= self.beta < 1.0):
            raise InvalidRuleError(f"beta must lie in [0, 1), got {self.beta}")
        if not (math.isfinite(self.mu) and self.mu >= 0.0):
            raise InvalidRuleError(f"mu must be finite and non-negative, got {self.mu}")

    @classmethod
    def fedavg(cls) -> 'AggregationRule':
        return cls('fedavg')

    @classmethod
    def vanillaavg(cls) -> 'AggregationRule':
        return cls('vanillaavg')

    @classmethod
    def beta_weighting(cls, beta: float = DEFAULT_BETA) -> 'AggregationRule':
        return cls('beta', beta=beta)

    @classmethod
    def softmax(cls) -> 'AggregationRule':
        return cls('softmax')

    @classmethod
    def fedprox(cls, mu: float = DEFAULT_MU) -> 'AggregationRule':
        return cls('fedprox', mu=mu)

    @property
    def uses_anchor(self) -> bool:
        return self.name == 'fedprox'

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {'name': self.name}
        if self.name == 'beta':
            out['beta'] = self.beta
        if self.name == 'fedprox':
            out['mu'] = self.mu
        return out


@dataclass(frozen=True)
class KappaWeights:
    weights: List[float]

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, index: int) -> float:
        return self.weights[index]


def _effective_number_weights(sizes: np.ndarray, beta: float) -> np.ndarray:
    # W = (1 - beta) / (1 - beta^n); beta = 0 gives 1 for every n >= 1
    if beta == 0.0:
        return np.ones_like(sizes, dtype=np.float64)
    return (1.0 - beta) / -np.expm1(sizes * np.log(beta))


def compute_kappa(rule: AggregationRule, sizes: Sequence[int]) -> KappaWeights:
    """
    Per-client aggregation weights for a rule.

    Args:
        rule (AggregationRule): the aggregation rule.
        sizes (Sequence[int]): training-set size of each client.

    Returns:
        KappaWeights: weights in [0, 1] summing to 1.

    Raises:
        InvalidRuleError: if sizes is empty, or holds a size below 1 (or below 0 for vanillaavg).
    """
    if len(sizes) == 0:
        raise InvalidRuleError("Cannot compute aggregation weights for zero clients.")
    n = np.asarray(sizes, dtype=np.float64)
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise InvalidRuleError(f"Client sizes must be non-negative counts, got {list(sizes)}")
    if rule.name != 'vanillaavg' and np.any(n < 1):
        raise InvalidRuleError(f"Rule '{rule.name}' requires every client size to be at least 1, got {list(sizes)}")

    if rule.name in ('fedavg', 'fedprox'):
        kappa = n / n.sum()
    elif rule.name == 'vanillaavg':
        kappa = np.full(n.size, 1.0 / n.size)
    elif rule.name == 'beta':
        w = _effective_number_weights(n, rule.beta)
        kappa = w / w.sum()
    else:
        e = np.exp(n - n.max())
        kappa = e / e.sum()
    return KappaWeights([float(k) for k in kappa])


def aggregate(rule: AggregationRule, models: Sequence[ParameterSet], sizes: Sequence[int]) -> ParameterSet:
    if len(models) != len(sizes):
        raise InvalidRuleError(f"Got {len(models)} models but {len(sizes)} sizes.")
    kappa = compute_kappa(rule, sizes)
    logger.debug(f"Aggregating {len(models)} models with rule '{rule.name}': kappa={kappa.weights}")
    return weighted_sum(models, kappa.weights)
