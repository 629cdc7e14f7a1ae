# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

from fedlesion.segmodel import (
    ModelConfig, Prediction, init_params, forward, forward_batch, loss_and_grad, predict_mask,
    bce_from_logits, soft_dice, numeric_gradient, gradient_relative_error, PROBABILITY_EPS,
)
from fedlesion.params import ParameterSet
from fedlesion.synthdata import generate_center
from fedlesion.common import ConfigurationError, DimensionMismatchError, EmptyBatchError, LayoutMismatchError

import math
import numpy as np
import pytest

from conftest import tiny_profile

SMALL = ModelConfig(layers=((2, 3, 3), (3, 1, 1)))


@pytest.fixture(scope="module")
def studies():
    return generate_center(tiny_profile(1, n_train=6, n_test=2)).all_studies()


def random_params(config: ModelConfig, rng: np.random.Generator, scale: float = 0.5) -> ParameterSet:
    return ParameterSet(rng.normal(0.0, scale, config.parameter_count), config.layout)


class TestModelConfig:
    def test_default_size(self):
        config = ModelConfig()
        assert config.parameter_count == 745
        assert config.layout == ((8, 2, 3, 3), (8,), (8, 8, 3, 3), (8,), (1, 8, 1, 1), (1,))

    @pytest.mark.parametrize("kwargs, message", [
        ({'layers': ()}, "at least one layer"),
        ({'layers': ((3, 1, 3),)}, "2 input channels"),
        ({'layers': ((2, 4, 3),)}, "produce 1 channel"),
        ({'layers': ((2, 4, 2), (4, 1, 1))}, "odd"),
        ({'layers': ((2, 4, 3), (5, 1, 1))}, "expects 5 channels"),
        ({'dice_weight': 1.5}, "dice_weight"),
        ({'threshold': 1.0}, "threshold"),
        ({'activation': 'relu'}, "activation"),
    ])
    def test_validation(self, kwargs, message):
        with pytest.raises(ConfigurationError, match=message):
            ModelConfig(**kwargs)


class TestForward:
    def test_init_is_seeded(self):
        a, b, c = init_params(ModelConfig(), 3), init_params(ModelConfig(), 3), init_params(ModelConfig(), 4)
        assert a.equals(b)
        assert not a.equals(c)
        assert a.layout == ModelConfig().layout
        assert not a.tensors()[1].any()  # biases start at zero

    def test_probabilities_in_range(self, studies):
        pred = forward(init_params(ModelConfig(), 0), studies[0])
        assert pred.shape == studies[0].shape
        assert pred.probabilities.min() >= PROBABILITY_EPS
        assert pred.probabilities.max() <= 1.0 - PROBABILITY_EPS

    def test_batch_matches_single(self, studies):
        params = init_params(ModelConfig(), 1)
        batch = forward_batch(params, studies[:3])
        for study, pred in zip(studies[:3], batch):
            assert np.allclose(pred.probabilities, forward(params, study).probabilities, rtol=0, atol=1e-12)
        assert forward_batch(params, []) == []

    def test_layout_mismatch(self, studies):
        with pytest.raises(LayoutMismatchError):
            forward(init_params(SMALL, 0), studies[0])

    def test_zero_model_predicts_nothing(self, studies):
        zero = init_params(ModelConfig(), 0).zeros_like()
        pred = forward(zero, studies[0])
        assert np.all(pred.probabilities == 0.5)
        assert not predict_mask(pred).any()

    def test_threshold_is_strict(self):
        pred = Prediction(np.array([[0.5, 0.5000001], [0.2, 0.9]]))
        assert predict_mask(pred, 0.5).tolist() == [[False, True], [False, True]]
        with pytest.raises(ConfigurationError, match="threshold"):
            predict_mask(pred, 0.0)


class TestLoss:
    def test_bce_and_dice_values(self):
        z = np.zeros((2, 2))
        assert bce_from_logits(z, np.zeros((2, 2))) == pytest.approx(math.log(2.0))
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert soft_dice(y, y) == 1.0
        assert soft_dice(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0

    def test_empty_batch(self):
        with pytest.raises(EmptyBatchError):
            loss_and_grad(init_params(ModelConfig(), 0), [])

    def test_mixed_grid_batch(self, studies):
        wide = generate_center(tiny_profile(2, n_train=1, n_test=1, image_size=(24, 24))).train[0]
        with pytest.raises(DimensionMismatchError, match="grid shape"):
            loss_and_grad(init_params(SMALL, 0), [studies[0], wide], SMALL)

    def test_gradient_layout(self, studies):
        params = init_params(ModelConfig(), 0)
        loss, grad = loss_and_grad(params, studies[:2])
        assert math.isfinite(loss) and loss > 0
        assert grad.compatible(params)

    def test_gradient_matches_finite_differences(self, studies):
        rng = np.random.default_rng(11)
        worst = 0.0
        for draw in range(20):
            config = ModelConfig(layers=SMALL.layers, dice_weight=float(rng.uniform(0.0, 1.0)))
            params = random_params(config, rng)
            picks = rng.choice(len(studies), size=int(rng.integers(1, 4)), replace=False)
            batch = [studies[int(i)] for i in picks]
            _, analytic = loss_and_grad(params, batch, config)
            numeric = numeric_gradient(lambda p: loss_and_grad(p, batch, config)[0], params)
            worst = max(worst, gradient_relative_error(analytic, numeric))
        assert worst <= 1e-4

    def test_default_model_gradient(self, studies):
        config = ModelConfig()
        params = random_params(config, np.random.default_rng(5), scale=0.2)
        _, analytic = loss_and_grad(params, studies[:2], config)
        numeric = numeric_gradient(lambda p: loss_and_grad(p, studies[:2], config)[0], params)
        assert gradient_relative_error(analytic, numeric) <= 1e-4

    def test_leaky_relu_gradient(self, studies):
        config = ModelConfig(layers=SMALL.layers, activation='leaky_relu')
        params = random_params(config, np.random.default_rng(6))
        _, analytic = loss_and_grad(params, studies[:2], config)
        numeric = numeric_gradient(lambda p: loss_and_grad(p, studies[:2], config)[0], params)
        assert gradient_relative_error(analytic, numeric) <= 1e-3
