# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

from fedlesion.evaluation import (
    EvaluationConfig, connected_components, dsc, volume_ml, avd, ald, lf1,
    categorize, category_bounds_ml, evaluate_patient,
)
from fedlesion.common import ConfigurationError, DimensionMismatchError

from collections import deque
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

UNIT = (10.0, 10.0, 10.0)  # 1 mL voxels


def flood_fill_count(mask: np.ndarray, connectivity: int) -> int:
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    seen = np.zeros_like(mask, dtype=bool)
    rows, cols = mask.shape
    count = 0
    for y in range(rows):
        for x in range(cols):
            if not mask[y, x] or seen[y, x]:
                continue
            count += 1
            queue = deque([(y, x)])
            seen[y, x] = True
            while queue:
                cy, cx = queue.popleft()
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < rows and 0 <= nx < cols and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
    return count


def grid(rows):
    return np.array([[c == '#' for c in row] for row in rows])


class TestConnectedComponents:
    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill_on_random_masks(self, connectivity):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            mask = rng.random((16, 16)) < rng.uniform(0.1, 0.6)
            assert connected_components(mask, connectivity).count == flood_fill_count(mask, connectivity)

    def test_diagonal_pair(self):
        mask = grid(["#.",
                     ".#"])
        assert connected_components(mask, 4).count == 2
        assert connected_components(mask, 8).count == 1

    def test_empty(self):
        assert connected_components(np.zeros((5, 5), dtype=bool)).count == 0

    def test_bad_connectivity(self):
        with pytest.raises(ConfigurationError, match="4 or 8"):
            connected_components(np.zeros((3, 3)), 6)


class TestVoxelMetrics:
    def test_dsc_hand_example(self):
        pred = grid(["##..",
                     "##.."])
        gt = grid([".##.",
                   ".##."])
        # |A|=4, |B|=4, |A and B|=2
        assert dsc(pred, gt) == 0.5

    def test_dsc_edge_cases(self):
        empty = np.zeros((4, 4), dtype=bool)
        full = np.ones((4, 4), dtype=bool)
        assert dsc(empty, empty) == 1.0
        assert dsc(full, empty) == 0.0
        assert dsc(full, full) == 1.0

    def test_volume_and_avd(self):
        pred = grid(["###.", "...."])
        gt = grid(["#...", "#..."])
        assert volume_ml(pred, UNIT) == 3.0
        assert avd(pred, gt, UNIT) == 1.0
        assert avd(gt, gt, UNIT) == 0.0

    def test_volume_uses_all_three_spacings(self):
        mask = np.ones((2, 5), dtype=bool)
        assert volume_ml(mask, (2.0, 5.0, 10.0)) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            dsc(np.zeros((3, 3)), np.zeros((3, 4)))
        with pytest.raises(DimensionMismatchError):
            lf1(np.zeros((3, 3)), np.zeros((4, 3)))


class TestLesionMetrics:
    def test_ald_hand_example(self):
        pred = grid(["#.#.#",
                     "....."])
        gt = grid(["##...",
                   "....."])
        assert ald(pred, gt) == 2
        assert ald(gt, pred) == 2

    def test_lf1_hand_example(self):
        # two gt lesions, one detected; two predicted lesions, one correct
        gt = grid(["##....#",
                   "##....#"])
        pred = grid(["#..#...",
                     "...#..."])
        assert lf1(pred, gt) == 0.5

    def test_lf1_perfect_and_empty(self):
        gt = grid(["#..#", "#..#"])
        assert lf1(gt, gt) == 1.0
        empty = np.zeros_like(gt)
        assert lf1(empty, empty) == 1.0
        assert lf1(empty, gt) == 0.0
        assert lf1(gt, empty) == 0.0

    def test_lf1_min_overlap(self):
        gt = grid(["####", "...."])
        pred = grid(["#...", "...."])
        assert lf1(pred, gt, min_overlap=0.0) == 1.0
        # covering 1 of 4 voxels is not enough at 50 %: recall 0, precision 1
        assert lf1(pred, gt, min_overlap=0.5) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_lf1_is_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((8, 8)) < 0.3, rng.random((8, 8)) < 0.3
        score = lf1(a, b)
        assert 0.0 <= score <= 1.0
        assert score == pytest.approx(lf1(b, a))


class TestCategories:
    def test_partition_boundaries(self):
        volumes = [0, 4.999, 5.0, 5.001, 20.0, 20.001]
        assert [categorize(v) for v in volumes] == ['N', 'S', 'S', 'M', 'M', 'L']

    def test_negative_volume(self):
        with pytest.raises(ValueError):
            categorize(-1.0)

    def test_bounds(self):
        assert category_bounds_ml('S') == (0.0, 5.0)
        assert category_bounds_ml('M') == (5.0, 20.0)
        with pytest.raises(ConfigurationError):
            category_bounds_ml('X')


class TestEvaluatePatient:
    def test_perfect_prediction(self):
        gt = grid(["##..", "##..", "...#"])
        m = evaluate_patient(gt, gt, UNIT)
        assert (m.dsc, m.avd_ml, m.ald, m.lf1) == (1.0, 0.0, 0, 1.0)
        assert m.gt_volume_ml == 5.0
        assert m.gt_lesion_count == 2
        assert m.category == 'S'

    def test_connectivity_from_config(self):
        gt = grid(["#.", ".#"])
        assert evaluate_patient(gt, gt, UNIT, config=EvaluationConfig(connectivity=4)).gt_lesion_count == 2
        assert evaluate_patient(gt, gt, UNIT).gt_lesion_count == 1

    def test_to_dict(self):
        gt = grid(["#."])
        d = evaluate_patient(np.zeros_like(gt), gt, UNIT).to_dict()
        assert d == {'dsc': 0.0, 'avd_ml': 1.0, 'ald': 1, 'lf1': 0.0,
                     'gt_volume_ml': 1.0, 'gt_lesion_count': 1, 'category': 'S'}

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            EvaluationConfig(connectivity=6)
        with pytest.raises(ConfigurationError):
            EvaluationConfig(min_overlap=1.5)
