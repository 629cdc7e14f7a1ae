# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# evaluation.py
"""
FedLesion - Segmentation Evaluation Module

Per-patient segmentation metrics: Dice score (DSC), absolute volume difference
(AVD, mL), absolute lesion difference (ALD, connected components) and
lesion-wise F1 (LF1), plus volume computation and lesion volume categories.
"""

import math
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from .common import ConfigurationError, DimensionMismatchError
from .formatting import Grid, Spacing

SMALL_LESION_MAX_ML = 5.0
MEDIUM_LESION_MAX_ML = 20.0
DEFAULT_CONNECTIVITY = 8


@dataclass(frozen=True)
class EvaluationConfig:
    """
    Parameters:
        connectivity (int): 4 or 8 neighbourhood used for lesion instances.
        min_overlap (float): fraction of a component that must be covered to count as matched
            in LF1; 0 means any single voxel.
    """
    connectivity: int = DEFAULT_CONNECTIVITY
    min_overlap: float = 0.0

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise ConfigurationError(f"Connectivity must be 4 or 8, got {self.connectivity}")
        if not 0.0 <= self.min_overlap <= 1.0:
            raise ConfigurationError(f"min_overlap must lie in [0, 1], got {self.min_overlap}")


@dataclass(frozen=True, eq=False)
class LabeledComponents:
    labels: np.ndarray
    count: int


@dataclass(frozen=True)
class SegmentationMetrics:
    dsc: float
    avd_ml: float
    ald: int
    lf1: float
    gt_volume_ml: float
    gt_lesion_count: int
    category: str

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _as_mask(grid: Grid) -> np.ndarray:
    return np.asarray(grid).astype(bool, copy=False)


def _check_dims(pred: Grid, gt: Grid):
    if np.shape(pred) != np.shape(gt):
        raise DimensionMismatchError(f"Prediction and ground truth differ in shape: {np.shape(pred)} vs {np.shape(gt)}")


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise ConfigurationError(f"Connectivity must be 4 or 8, got {connectivity}")


def connected_components(mask: Grid, connectivity: int = DEFAULT_CONNECTIVITY) -> LabeledComponents:
    labels, count = ndimage.label(_as_mask(mask), structure=_structure(connectivity))
    return LabeledComponents(labels=labels, count=int(count))


def dsc(pred: Grid, gt: Grid) -> float:
    _check_dims(pred, gt)
    a, b = _as_mask(pred), _as_mask(gt)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def volume_from_count(count: int, spacing: Spacing) -> float:
    x, y, z = spacing
    return count * (x * y * z) / 1000.0


def volume_ml(mask: Grid, spacing: Spacing) -> float:
    return volume_from_count(int(_as_mask(mask).sum()), spacing)


def avd(pred: Grid, gt: Grid, spacing: Spacing) -> float:
    _check_dims(pred, gt)
    return abs(volume_ml(pred, spacing) - volume_ml(gt, spacing))


def ald(pred: Grid, gt: Grid, connectivity: int = DEFAULT_CONNECTIVITY) -> int:
    _check_dims(pred, gt)
    return abs(connected_components(pred, connectivity).count - connected_components(gt, connectivity).count)


def _matched(components: LabeledComponents, other: np.ndarray, min_overlap: float) -> int:
    # Number of components covered by `other` in at least max(1, ceil(min_overlap * size)) voxels
    if components.count == 0:
        return 0
    index = np.arange(1, components.count + 1)
    sizes = ndimage.sum_labels(np.ones_like(other, dtype=np.int64), components.labels, index)
    overlaps = ndimage.sum_labels(other.astype(np.int64), components.labels, index)
    needed = np.maximum(1, np.ceil(min_overlap * sizes))
    return int(np.count_nonzero(overlaps >= needed))


def lf1(pred: Grid, gt: Grid, connectivity: int = DEFAULT_CONNECTIVITY, min_overlap: float = 0.0) -> float:
    """
    Lesion-wise F1 over connected components.

    A ground-truth lesion is detected when the prediction overlaps it; a predicted
    lesion is correct when it overlaps the ground truth. Both masks empty scores 1.0,
    exactly one empty scores 0.0.
    """
    _check_dims(pred, gt)
    p, g = _as_mask(pred), _as_mask(gt)
    pred_cc = connected_components(p, connectivity)
    gt_cc = connected_components(g, connectivity)
    if pred_cc.count == 0 and gt_cc.count == 0:
        return 1.0
    if pred_cc.count == 0 or gt_cc.count == 0:
        return 0.0
    recall = _matched(gt_cc, p, min_overlap) / gt_cc.count
    precision = _matched(pred_cc, g, min_overlap) / pred_cc.count
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def categorize(volume: float) -> str:
    if volume < 0 or math.isnan(volume):
        raise ValueError(f"Lesion volume must be non-negative, got {volume}")
    if volume == 0:
        return 'N'
    if volume <= SMALL_LESION_MAX_ML:
        return 'S'
    if volume <= MEDIUM_LESION_MAX_ML:
        return 'M'
    return 'L'


def category_bounds_ml(category: str) -> Tuple[float, float]:
    # (exclusive lower, inclusive upper) volume bounds; N is exactly 0
    bounds = {
        'N': (0.0, 0.0),
        'S': (0.0, SMALL_LESION_MAX_ML),
        'M': (SMALL_LESION_MAX_ML, MEDIUM_LESION_MAX_ML),
        'L': (MEDIUM_LESION_MAX_ML, math.inf),
    }
    if category not in bounds:
        raise ConfigurationError(f"Unknown lesion category '{category}'")
    return bounds[category]


def evaluate_patient(pred: Grid, gt: Grid, spacing: Spacing,
                     connectivity: int = DEFAULT_CONNECTIVITY,
                     config: Optional[EvaluationConfig] = None) -> SegmentationMetrics:
    _check_dims(pred, gt)
    min_overlap = 0.0
    if config is not None:
        connectivity, min_overlap = config.connectivity, config.min_overlap
    p, g = _as_mask(pred), _as_mask(gt)
    gt_volume = volume_ml(g, spacing)
    return SegmentationMetrics(
        dsc=dsc(p, g),
        avd_ml=avd(p, g, spacing),
        ald=ald(p, g, connectivity),
        lf1=lf1(p, g, connectivity, min_overlap),
        gt_volume_ml=gt_volume,
        gt_lesion_count=connected_components(g, connectivity).count,
        category=categorize(gt_volume),
    )
