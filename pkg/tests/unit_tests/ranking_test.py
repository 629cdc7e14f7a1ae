# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

from fedlesion.ranking import RelativeErrors, relative_errors, pre, rank_models
from fedlesion.evaluation import SegmentationMetrics
from fedlesion.common import EmptyCohortError

import pytest
from hypothesis import given, settings, strategies as st


def metrics(dsc=1.0, avd_ml=0.0, ald=0, lf1=1.0, gt_volume_ml=10.0, gt_lesion_count=2, category='M'):
    return SegmentationMetrics(dsc=dsc, avd_ml=avd_ml, ald=ald, lf1=lf1, gt_volume_ml=gt_volume_ml,
                               gt_lesion_count=gt_lesion_count, category=category)


class TestRelativeErrors:
    def test_perfect(self):
        assert relative_errors(metrics()) == RelativeErrors(0.0, 0.0, 0.0, 0.0)

    def test_values(self):
        errors = relative_errors(metrics(dsc=0.6, avd_ml=2.5, ald=1, lf1=0.75))
        assert errors.delta_dsc == pytest.approx(0.4)
        assert errors.delta_avd == pytest.approx(0.25)
        assert errors.delta_ald == pytest.approx(0.5)
        assert errors.delta_lf1 == pytest.approx(0.25)
        assert errors.mean() == pytest.approx(0.35)

    def test_clipped_to_one(self):
        errors = relative_errors(metrics(avd_ml=40.0, ald=9))
        assert errors.delta_avd == 1.0
        assert errors.delta_ald == 1.0

    def test_empty_reference(self):
        assert relative_errors(metrics(avd_ml=0.0, ald=0, gt_volume_ml=0.0, gt_lesion_count=0)).delta_avd == 0.0
        errors = relative_errors(metrics(avd_ml=1.2, ald=1, gt_volume_ml=0.0, gt_lesion_count=0))
        assert (errors.delta_avd, errors.delta_ald) == (1.0, 1.0)

    def test_to_dict(self):
        assert set(RelativeErrors(0, 0, 0, 0).to_dict()) == {'delta_dsc', 'delta_avd', 'delta_ald', 'delta_lf1'}


class TestPRE:
    def test_mean_of_means(self):
        cohort = [RelativeErrors(0.0, 0.0, 0.0, 0.0), RelativeErrors(1.0, 1.0, 1.0, 1.0), RelativeErrors(0.4, 0.2, 0.0, 0.2)]
        assert pre(cohort) == pytest.approx((0.0 + 1.0 + 0.2) / 3)

    def test_empty(self):
        with pytest.raises(EmptyCohortError):
            pre([])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(*[st.floats(0.0, 1.0)] * 4), min_size=1, max_size=30), st.randoms())
    def test_bounded_and_order_free(self, rows, rnd):
        cohort = [RelativeErrors(*row) for row in rows]
        value = pre(cohort)
        assert 0.0 <= value <= 1.0
        shuffled = list(cohort)
        rnd.shuffle(shuffled)
        assert pre(shuffled) == value


class TestRankModels:
    def test_ascending(self):
        ranking = rank_models({'fedavg': 0.3, 'softmax': 0.1, 'beta': 0.2})
        assert ranking.names == ['softmax', 'beta', 'fedavg']
        assert ranking.position('fedavg') == 3

    def test_ties_broken_by_name(self):
        assert rank_models({'b': 0.2, 'a': 0.2, 'c': 0.1}).names == ['c', 'a', 'b']

    def test_empty(self):
        with pytest.raises(EmptyCohortError):
            rank_models({})


class TestPREProperties:
    def test_perfect_cohort_is_zero(self):
        assert pre([relative_errors(metrics()) for _ in range(5)]) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(*[st.floats(0.0, 1.0)] * 4), min_size=1, max_size=10),
           st.integers(min_value=0, max_value=3), st.floats(0.0, 1.0))
    def test_monotone_in_each_delta(self, rows, which, bump):
        cohort = [RelativeErrors(*row) for row in rows]
        worse_row = list(rows[0])
        worse_row[which] = max(worse_row[which], bump)
        worse = [RelativeErrors(*worse_row)] + cohort[1:]
        assert pre(worse) >= pre(cohort)
