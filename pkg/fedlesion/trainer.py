# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# trainer.py
"""
FedLesion - Local Training Module

Mini-batch SGD on one center's training split, optionally with the FedProx
proximal term (mu / 2) * ||theta - theta_anchor||^2 pulling the local model
toward the federated model it started from.
"""

import logging, math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .common import ConfigurationError, EmptyDatasetError, LayoutMismatchError
from .params import ParameterSet, l2_sq_distance, scale_add
from .segmodel import ModelConfig, loss_and_grad
from .synthdata import PhantomStudy

logger = logging.getLogger(__package__)

DESK_EPOCHS_PER_ROUND = 3
FULL_EPOCHS_PER_ROUND = 20


@dataclass(frozen=True)
class TrainConfig:
    """
    Parameters:
        epochs_per_round (int): local epochs per federated round (desk 3, full schedule 20).
        batch_size (int): studies per SGD step; the last batch of an epoch may be smaller.
        learning_rate (float): SGD step size.
        mu (float): proximal coefficient; only used when an anchor is given.
        seed (int): shuffling seed; combined with the round index.
    """
    epochs_per_round: int = DESK_EPOCHS_PER_ROUND
    batch_size: int = 4
    learning_rate: float = 0.5
    mu: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs_per_round) < 1:
            raise ConfigurationError(f"epochs_per_round must be at least 1, got {self.epochs_per_round}")
        if int(self.batch_size) < 1:
            raise ConfigurationError(f"batch_size must be at least 1, got {self.batch_size}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigurationError(f"learning_rate must be finite and positive, got {self.learning_rate}")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ConfigurationError(f"mu must be finite and non-negative, got {self.mu}")
        if not 0 <= int(self.seed) < 2**32:
            raise ConfigurationError(f"seed must be an unsigned 32-bit integer, got {self.seed}")


def prox_penalty(params: ParameterSet, anchor: ParameterSet, mu: float) -> float:
    if mu == 0.0:
        if not params.compatible(anchor):
            raise LayoutMismatchError(f"Incompatible parameter layouts: {params.layout} vs {anchor.layout}")
        return 0.0
    return 0.5 * mu * l2_sq_distance(params, anchor)


def total_loss_and_grad(params: ParameterSet, batch: Sequence[PhantomStudy], model: ModelConfig,
                        anchor: Optional[ParameterSet] = None, mu: float = 0.0) -> Tuple[float, ParameterSet]:
    """
    Base loss plus the proximal term, with gradient grad + mu * (params - anchor).
    """
    loss, grad = loss_and_grad(params, batch, model)
    if anchor is None or mu == 0.0:
        return loss, grad
    loss += prox_penalty(params, anchor, mu)
    grad = scale_add(grad, mu, scale_add(params, -1.0, anchor))
    return loss, grad


def shuffle_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round_index)]))


def _sgd_step(params: ParameterSet, grad: ParameterSet, lr: float,
              anchor: Optional[ParameterSet], mu: float) -> ParameterSet:
    # The proximal pull is taken implicitly so lr * mu may be arbitrarily large
    if anchor is None or mu == 0.0:
        return scale_add(params, -lr, grad)
    values = (params.values - lr * grad.values + (lr * mu) * anchor.values) / (1.0 + lr * mu)
    return ParameterSet(values, params.layout)


def train_local(start: ParameterSet, data: Sequence[PhantomStudy], cfg: TrainConfig,
                anchor: Optional[ParameterSet] = None, round_index: int = 0,
                model: ModelConfig = ModelConfig(), history: Optional[List[float]] = None) -> ParameterSet:
    """
    Run cfg.epochs_per_round epochs of mini-batch SGD from `start`.

    Args:
        start (ParameterSet): initial parameters (usually the current federated model).
        data (Sequence[PhantomStudy]): the center's training studies.
        cfg (TrainConfig): optimizer settings.
        anchor (ParameterSet, optional): proximal anchor; ignored when cfg.mu is 0.
        round_index (int): federated round, mixed into the shuffling seed.
        model (ModelConfig): architecture and loss mix.
        history (List[float], optional): when given, the batch loss of every step is appended.

    Returns:
        ParameterSet: final local parameters.

    Raises:
        EmptyDatasetError: if data is empty.
        LayoutMismatchError: if the anchor does not match start.
    """
    if len(data) == 0:
        raise EmptyDatasetError("Local training needs at least one study.")
    if anchor is not None and not anchor.compatible(start):
        raise LayoutMismatchError(f"Anchor layout {anchor.layout} does not match {start.layout}")
    mu = cfg.mu if anchor is not None else 0.0
    rng = shuffle_rng(cfg.seed, round_index)
    params = start
    steps = 0
    for epoch in range(cfg.epochs_per_round):
        order = rng.permutation(len(data))
        for begin in range(0, len(data), cfg.batch_size):
            batch = [data[int(i)] for i in order[begin:begin + cfg.batch_size]]
            loss, grad = total_loss_and_grad(params, batch, model, anchor, mu)
            if history is not None:
                history.append(loss)
            params = _sgd_step(params, grad, cfg.learning_rate, anchor, mu)
            steps += 1
    logger.debug(f"Local training: {steps} steps over {len(data)} studies (round {round_index}, mu={mu}).")
    return params
