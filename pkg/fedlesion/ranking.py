# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# ranking.py
"""
FedLesion - Ranking Module

Clipped relative errors against a perfect segmentation and the mean patient
relative error (PRE) used to order models; lower is better.

For DSC and LF1 the reference value is 1. For AVD and ALD the expert value of
the difference itself is 0, so the error is taken relative to the ground-truth
volume and lesion count; a control patient scores 0 when the prediction is
also empty and 1 otherwise.
"""

import math
from dataclasses import dataclass, asdict
from typing import Dict, List, Mapping, Sequence, Tuple

from .common import EmptyCohortError
from .evaluation import SegmentationMetrics


def _clip01(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


@dataclass(frozen=True)
class RelativeErrors:
    delta_dsc: float
    delta_avd: float
    delta_ald: float
    delta_lf1: float

    def mean(self) -> float:
        return (self.delta_dsc + self.delta_avd + self.delta_ald + self.delta_lf1) / 4.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class ModelRanking:
    entries: List[Tuple[str, float]]

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.entries]

    def position(self, name: str) -> int:
        # 1-based rank
        return self.names.index(name) + 1


def _relative(value: float, reference: float) -> float:
    if reference == 0:
        return 0.0 if value == 0 else 1.0
    return _clip01(value / reference)


def relative_errors(m: SegmentationMetrics) -> RelativeErrors:
    return RelativeErrors(
        delta_dsc=_clip01(1.0 - m.dsc),
        delta_avd=_relative(m.avd_ml, m.gt_volume_ml),
        delta_ald=_relative(m.ald, m.gt_lesion_count),
        delta_lf1=_clip01(1.0 - m.lf1),
    )


def pre(all_patients: Sequence[RelativeErrors]) -> float:
    """
    Mean over patients of the mean of the four clipped deltas.

    Raises:
        EmptyCohortError: for an empty cohort.
    """
    if len(all_patients) == 0:
        raise EmptyCohortError("PRE is undefined for an empty cohort.")
    # fsum is exactly rounded, so the result does not depend on patient order
    return math.fsum(e.mean() for e in all_patients) / len(all_patients)


def rank_models(scores: Mapping[str, float]) -> ModelRanking:
    if len(scores) == 0:
        raise EmptyCohortError("Cannot rank an empty set of models.")
    entries = sorted(((str(name), float(score)) for name, score in scores.items()), key=lambda item: (item[1], item[0]))
    return ModelRanking(entries)
