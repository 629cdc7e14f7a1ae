# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# segmodel.py
"""
FedLesion - Segmentation Model Module

A small fully convolutional network over the two-channel (DWI, ADC) phantom
with hand-written backpropagation. Convolutions use same padding so the
probability map has the input's dimensions. The loss mixes mean binary
cross-entropy and soft-Dice:

    loss = (1 - dice_weight) * BCE + dice_weight * (1 - softDice)

averaged over the studies of a batch.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .common import ConfigurationError, DimensionMismatchError, EmptyBatchError, LayoutMismatchError
from .formatting import Layout
from .params import ParameterSet
from .synthdata import PhantomStudy

logger = logging.getLogger(__package__)

ADC_INPUT_SCALE = 1e-3
DICE_SMOOTH = 1.0
PROBABILITY_EPS = 1e-12
LEAKY_SLOPE = 0.01
ACTIVATIONS = ('tanh', 'leaky_relu')

LayerSpec = Tuple[int, int, int]
DEFAULT_LAYERS: Tuple[LayerSpec, ...] = ((2, 8, 3), (8, 8, 3), (8, 1, 1))


@dataclass(frozen=True)
class ModelConfig:
    """
    Parameters:
        layers (Tuple[Tuple[int, int, int], ...]): (in_channels, out_channels, kernel_size) per convolution.
        dice_weight (float): mixing weight of the soft-Dice term, in [0, 1].
        threshold (float): probability threshold used by predict_mask, in (0, 1).
        activation (str): 'tanh' or 'leaky_relu' between convolutions.
    """
    layers: Tuple[LayerSpec, ...] = DEFAULT_LAYERS
    dice_weight: float = 0.5
    threshold: float = 0.5
    activation: str = 'tanh'

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in layer) for layer in self.layers)
        object.__setattr__(self, 'layers', layers)
        if not layers:
            raise ConfigurationError("A model needs at least one layer.")
        if any(len(layer) != 3 for layer in layers):
            raise ConfigurationError("Each layer is (in_channels, out_channels, kernel_size).")
        if layers[0][0] != 2:
            raise ConfigurationError(f"The first layer must take 2 input channels (DWI, ADC), got {layers[0][0]}")
        if layers[-1][1] != 1:
            raise ConfigurationError(f"The last layer must produce 1 channel, got {layers[-1][1]}")
        for index, (c_in, c_out, k) in enumerate(layers):
            if c_in <= 0 or c_out <= 0:
                raise ConfigurationError(f"Layer {index} has a non-positive channel count.")
            if k <= 0 or k % 2 == 0:
                raise ConfigurationError(f"Layer {index} kernel size must be odd, got {k}")
            if index > 0 and layers[index - 1][1] != c_in:
                raise ConfigurationError(f"Layer {index} expects {c_in} channels but receives {layers[index - 1][1]}")
        if not 0.0 <= self.dice_weight <= 1.0:
            raise ConfigurationError(f"dice_weight must lie in [0, 1], got {self.dice_weight}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation '{self.activation}', expected one of {ACTIVATIONS}")

    @property
    def layout(self) -> Layout:
        shapes = []
        for c_in, c_out, k in self.layers:
            shapes.append((c_out, c_in, k, k))
            shapes.append((c_out,))
        return tuple(shapes)

    @property
    def parameter_count(self) -> int:
        return sum(c_in * c_out * k * k + c_out for c_in, c_out, k in self.layers)


@dataclass(frozen=True, eq=False)
class Prediction:
    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probabilities.shape


@dataclass
class _Cache:
    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)


def init_params(config: ModelConfig, seed: int) -> ParameterSet:
    """
    Seeded Glorot-normal weights and zero biases, laid out as (weight, bias) per layer.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    tensors = []
    for c_in, c_out, k in config.layers:
        std = np.sqrt(2.0 / (c_in * k * k + c_out * k * k))
        tensors.append(rng.normal(0.0, std, size=(c_out, c_in, k, k)))
        tensors.append(np.zeros(c_out))
    return ParameterSet.from_tensors(tensors)


def study_input(study: PhantomStudy) -> np.ndarray:
    # (2, rows, cols) network input; ADC brought to order one
    return np.stack([np.asarray(study.dwi, dtype=np.float64), ADC_INPUT_SCALE * np.asarray(study.adc, dtype=np.float64)])


def _stack_batch(batch: Sequence[PhantomStudy]) -> Tuple[np.ndarray, np.ndarray]:
    shapes = {s.shape for s in batch}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"All studies of a batch must share one grid shape, got {sorted(shapes)}")
    x = np.stack([study_input(s) for s in batch])
    y = np.stack([np.asarray(s.gt_mask, dtype=np.float64) for s in batch])
    return x, y


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # x: (B, C, H, W); weight: (O, C, k, k); same padding
    _, _, rows, cols = x.shape
    k = weight.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((x.shape[0], weight.shape[0], rows, cols))
    for di in range(k):
        for dj in range(k):
            out += np.einsum('bchw,oc->bohw', xp[:, :, di:di + rows, dj:dj + cols], weight[:, :, di, dj], optimize=True)
    return out + bias[None, :, None, None]


def _conv_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, _, rows, cols = x.shape
    k = weight.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    grad_w = np.zeros_like(weight)
    grad_xp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            window = xp[:, :, di:di + rows, dj:dj + cols]
            grad_w[:, :, di, dj] = np.einsum('bohw,bchw->oc', grad_out, window, optimize=True)
            grad_xp[:, :, di:di + rows, dj:dj + cols] += np.einsum('bohw,oc->bchw', grad_out, weight[:, :, di, dj], optimize=True)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = grad_xp[:, :, pad:pad + rows, pad:pad + cols] if pad else grad_xp
    return grad_x, grad_w, grad_b


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == 'tanh':
        return np.tanh(z)
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == 'tanh':
        t = np.tanh(z)
        return 1.0 - t * t
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _check_layout(params: ParameterSet, config: ModelConfig):
    if params.layout != config.layout:
        raise LayoutMismatchError(f"Parameters with layout {params.layout} do not fit model layout {config.layout}")


def _logits(params: ParameterSet, config: ModelConfig, x: np.ndarray, cache: _Cache = None) -> np.ndarray:
    tensors = params.tensors()
    h = x
    last = len(config.layers) - 1
    for index in range(len(config.layers)):
        weight, bias = tensors[2 * index], tensors[2 * index + 1]
        z = _conv_forward(h, weight, bias)
        if cache is not None:
            cache.inputs.append(h)
            cache.pre_activations.append(z)
        h = z if index == last else _activate(z, config.activation)
    return h[:, 0]


def forward(params: ParameterSet, study: PhantomStudy, config: ModelConfig = ModelConfig()) -> Prediction:
    """
    Per-voxel lesion probabilities for one study, clipped into [1e-12, 1 - 1e-12].

    Raises:
        LayoutMismatchError: if params were not built for this model config.
    """
    _check_layout(params, config)
    z = _logits(params, config, study_input(study)[None])[0]
    return Prediction(np.clip(expit(z), PROBABILITY_EPS, 1.0 - PROBABILITY_EPS))


def forward_batch(params: ParameterSet, batch: Sequence[PhantomStudy], config: ModelConfig = ModelConfig()) -> List[Prediction]:
    if len(batch) == 0:
        return []
    _check_layout(params, config)
    x, _ = _stack_batch(batch)
    z = _logits(params, config, x)
    return [Prediction(np.clip(expit(zi), PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)) for zi in z]


def bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # mean of log(1 + e^z) - y z, stable for large |z|
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def soft_dice(p: np.ndarray, y: np.ndarray, smooth: float = DICE_SMOOTH) -> float:
    return float((2.0 * np.sum(p * y) + smooth) / (np.sum(p) + np.sum(y) + smooth))


def loss_and_grad(params: ParameterSet, batch: Sequence[PhantomStudy],
                  config: ModelConfig = ModelConfig()) -> Tuple[float, ParameterSet]:
    """
    Compound loss over a batch and its analytic gradient.

    Args:
        params (ParameterSet): model parameters.
        batch (Sequence[PhantomStudy]): non-empty list of same-shape studies.
        config (ModelConfig): architecture and loss mix.

    Returns:
        Tuple[float, ParameterSet]: mean loss over the batch and its gradient (same layout as params).

    Raises:
        EmptyBatchError: if the batch is empty.
        LayoutMismatchError: if params do not fit the config.
        DimensionMismatchError: if the studies of the batch differ in grid shape.
    """
    if len(batch) == 0:
        raise EmptyBatchError("Cannot compute a loss over an empty batch.")
    _check_layout(params, config)
    x, y = _stack_batch(batch)
    n_batch = x.shape[0]
    n_vox = y[0].size
    lam = config.dice_weight

    cache = _Cache()
    z = _logits(params, config, x, cache)
    p = expit(z)

    bce = np.mean(np.logaddexp(0.0, z) - y * z, axis=(1, 2))
    inter = np.sum(p * y, axis=(1, 2))
    total = np.sum(p, axis=(1, 2)) + np.sum(y, axis=(1, 2))
    dice = (2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH)
    loss = float(np.mean((1.0 - lam) * bce + lam * (1.0 - dice)))

    # d(1 - dice)/dp per voxel, then chain through the sigmoid
    denom = (total + DICE_SMOOTH)[:, None, None]
    d_dice_dp = (2.0 * y * denom - (2.0 * inter + DICE_SMOOTH)[:, None, None]) / (denom * denom)
    grad_z = (1.0 - lam) * (p - y) / n_vox - lam * d_dice_dp * p * (1.0 - p)
    grad_h = (grad_z / n_batch)[:, None]

    tensors = params.tensors()
    grads: List[np.ndarray] = [None] * len(tensors)
    for index in reversed(range(len(config.layers))):
        if index != len(config.layers) - 1:
            grad_h = grad_h * _activate_grad(cache.pre_activations[index], config.activation)
        grad_x, grad_w, grad_b = _conv_backward(cache.inputs[index], tensors[2 * index], grad_h)
        grads[2 * index], grads[2 * index + 1] = grad_w, grad_b
        grad_h = grad_x
    return loss, ParameterSet.from_tensors(grads)


def predict_mask(pred: Prediction, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must lie in (0, 1), got {threshold}")
    return np.asarray(pred.probabilities) > threshold


def numeric_gradient(loss_fn, params: ParameterSet, step: float = 1e-5) -> ParameterSet:
    """
    Central finite differences of a scalar loss function of a ParameterSet.
    """
    values = np.array(params.values)
    grad = np.zeros_like(values)
    for i in range(values.size):
        original = values[i]
        values[i] = original + step
        plus = loss_fn(ParameterSet(values, params.layout))
        values[i] = original - step
        minus = loss_fn(ParameterSet(values, params.layout))
        values[i] = original
        grad[i] = (plus - minus) / (2.0 * step)
    return ParameterSet(grad, params.layout)


def gradient_relative_error(analytic: ParameterSet, numeric: ParameterSet) -> float:
    scale = max(float(np.max(np.abs(numeric.values))), 1e-12)
    return float(np.max(np.abs(analytic.values - numeric.values))) / scale
