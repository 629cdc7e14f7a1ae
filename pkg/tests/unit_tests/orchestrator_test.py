# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

from fedlesion.orchestrator import (
    FederationConfig, SUITE_MODELS, common_init_seed, center_init_seed, initial_params, local_train_config,
    evaluation_cohort, evaluate_model, run_federated, run_centralized, run_suite,
)
from fedlesion.aggregation import AggregationRule, aggregate, compute_kappa
from fedlesion.params import weighted_sum, load_checkpoint
from fedlesion.segmodel import ModelConfig, init_params
from fedlesion.synthdata import generate_federation, default_federation
from fedlesion.trainer import TrainConfig, train_local
from fedlesion.common import ConfigurationError

import math
from dataclasses import replace
import pytest

from conftest import tiny_profile

SMALL = ModelConfig(layers=((2, 4, 3), (4, 1, 1)))
FAST = TrainConfig(epochs_per_round=1, batch_size=2)


def tiny_config(centers, **overrides) -> FederationConfig:
    values = dict(rounds=2, rule=AggregationRule.fedavg(), train=FAST, model=SMALL, centers=centers, master_seed=7)
    values.update(overrides)
    return FederationConfig(**values)


@pytest.fixture
def tiny_data(tiny_centers):
    return generate_federation(tiny_centers)


class TestFederationConfig:
    def test_default_centers(self):
        config = FederationConfig()
        assert [p.center_id for p in config.centers] == [p.center_id for p in default_federation(2024)]
        assert len(config.large_centers) == 10
        assert len(config.limited_centers) == 4
        assert config.total_epochs == 30 * 3

    @pytest.mark.parametrize("overrides", [
        {'rounds': 0}, {'eval_every': 0}, {'workers': 0}, {'master_seed': -1}, {'master_seed': 2**32},
    ])
    def test_invalid_values(self, tiny_centers, overrides):
        with pytest.raises(ConfigurationError):
            tiny_config(tiny_centers, **overrides)

    def test_invalid_centers(self, tiny_centers):
        with pytest.raises(ConfigurationError, match="large center"):
            tiny_config([tiny_profile(3, is_large=False)])
        with pytest.raises(ConfigurationError, match="unique"):
            tiny_config(tiny_centers + [tiny_profile(1)])
        with pytest.raises(ConfigurationError, match="image size"):
            tiny_config(tiny_centers + [tiny_profile(4, image_size=(32, 32))])
        with pytest.raises(ConfigurationError, match="no training"):
            tiny_config([tiny_profile(1, n_train=0)])

    def test_to_dict(self, tiny_centers):
        out = tiny_config(tiny_centers).to_dict()
        assert out['rule'] == {'name': 'fedavg'}
        assert [c['center_id'] for c in out['centers']] == [1, 2, 3]
        assert out['model']['layers'] == [[2, 4, 3], [4, 1, 1]]


class TestStartingPoint:
    def test_common_init(self, tiny_centers):
        config = tiny_config(tiny_centers)
        assert initial_params(config).equals(init_params(SMALL, common_init_seed(7)))

    def test_per_center_init(self, tiny_centers):
        config = tiny_config(tiny_centers, per_center_init=True, rule=AggregationRule.vanillaavg())
        large = config.large_centers
        expected = aggregate(config.rule, [init_params(SMALL, center_init_seed(p)) for p in large], [4, 6])
        assert initial_params(config).equals(expected)
        assert not initial_params(config).equals(initial_params(tiny_config(tiny_centers)))

    def test_per_center_init_follows_datasets(self, tiny_centers):
        config = tiny_config(tiny_centers, per_center_init=True)
        resized = [tiny_profile(1, n_train=2, n_test=2), tiny_profile(2, n_train=8, n_test=2),
                   tiny_profile(3, is_large=False, n_test=3)]
        datasets = generate_federation(resized)
        expected = aggregate(config.rule, [init_params(SMALL, center_init_seed(p)) for p in resized[:2]], [2, 8])
        assert initial_params(config, datasets).equals(expected)
        assert not initial_params(config, datasets).equals(initial_params(config))

    def test_local_train_config(self, tiny_centers):
        prox = tiny_config(tiny_centers, rule=AggregationRule.fedprox(0.7))
        assert local_train_config(prox, tiny_centers[0]).mu == 0.7
        plain = tiny_config(tiny_centers)
        a, b = (local_train_config(plain, p) for p in tiny_centers[:2])
        assert a.mu == FAST.mu
        assert a.seed != b.seed


class TestEvaluation:
    def test_cohort(self, tiny_data):
        cohort = evaluation_cohort(tiny_data)
        assert [pool for pool, _ in cohort] == ['large'] * 4 + ['limited'] * 3
        assert all(s in tiny_data[0].test + tiny_data[1].test for pool, s in cohort if pool == 'large')

    def test_rows(self, tiny_data):
        rows = evaluate_model(init_params(SMALL, 0), tiny_data, SMALL, model_name='scratch')
        assert len(rows) == 7
        assert {r['model'] for r in rows} == {'scratch'}
        for row in rows:
            assert 0.0 <= row['pre'] <= 1.0
            assert row['pre'] == pytest.approx((row['delta_dsc'] + row['delta_avd'] + row['delta_ald'] + row['delta_lf1']) / 4)


class TestRunFederated:
    def test_report_shape(self, tiny_centers, tiny_data):
        report = run_federated(tiny_config(tiny_centers), tiny_data)
        assert report.model_name == 'fedavg'
        assert [r.round_index for r in report.rounds] == [1, 2]
        assert report.final_round.pools['large']['n'] == 4
        assert report.final_round.pools['limited']['n'] == 3
        assert report.kappa == pytest.approx([0.4, 0.6])
        assert report.epochs_trained == 2
        assert 0.0 <= report.final_pre('large') <= 1.0
        assert len(report.pool_errors('limited')) == 3
        assert set(report.final_round.per_center) == {1, 2, 3}
        out = report.to_dict()
        assert out['report_digest'] == report.digest()
        assert 'schema_version' in out

    def test_generates_data_when_missing(self, tiny_centers, tiny_data):
        config = tiny_config(tiny_centers, rounds=1)
        assert run_federated(config).digest() == run_federated(config, tiny_data).digest()

    def test_deterministic(self, tiny_centers, tiny_data):
        config = tiny_config(tiny_centers, rule=AggregationRule.softmax())
        assert run_federated(config, tiny_data).digest() == run_federated(config, tiny_data).digest()

    def test_workers_do_not_change_results(self, tiny_centers, tiny_data):
        serial = run_federated(tiny_config(tiny_centers, workers=1), tiny_data)
        threaded = run_federated(tiny_config(tiny_centers, workers=3), tiny_data)
        assert serial.digest() == threaded.digest()
        assert serial.final_params.equals(threaded.final_params)

    def test_single_center_is_local_training(self):
        profile = tiny_profile(1)
        data = generate_federation([profile])
        config = tiny_config([profile], rounds=1, rule=AggregationRule.softmax())
        report = run_federated(config, data)
        start = init_params(SMALL, common_init_seed(7))
        local = train_local(start, data[0].train, local_train_config(config, profile), round_index=1, model=SMALL)
        assert report.final_params.equals(local)
        assert report.patients == evaluate_model(local, data, SMALL, model_name='softmax')

    def test_fedprox_without_mu_is_fedavg(self, tiny_centers, tiny_data):
        fedavg = run_federated(tiny_config(tiny_centers), tiny_data)
        fedprox = run_federated(tiny_config(tiny_centers, rule=AggregationRule.fedprox(0.0)), tiny_data)
        assert fedprox.model_name == 'fedprox'
        assert fedprox.final_params.equals(fedavg.final_params)
        assert fedprox.digest() == fedavg.digest()

    def test_fedprox_differs_with_mu(self, tiny_centers, tiny_data):
        fedavg = run_federated(tiny_config(tiny_centers), tiny_data)
        fedprox = run_federated(tiny_config(tiny_centers, rule=AggregationRule.fedprox(5.0)), tiny_data)
        assert not fedprox.final_params.equals(fedavg.final_params)

    def test_aggregate_is_convex_combination_of_local_models(self, tiny_centers, tiny_data):
        config = tiny_config(tiny_centers, rounds=1, rule=AggregationRule.beta_weighting(0.9))
        report = run_federated(config, tiny_data)
        large = [ds for ds in tiny_data if ds.profile.is_large]
        start = initial_params(config)
        local_models = [train_local(start, ds.train, local_train_config(config, ds.profile), round_index=1, model=SMALL)
                        for ds in large]
        kappa = compute_kappa(config.rule, [len(ds.train) for ds in large])
        assert len(report.kappa) == len(large)
        assert report.final_params.equals(weighted_sum(local_models, kappa.weights))

    def test_eval_every(self, tiny_centers, tiny_data):
        report = run_federated(tiny_config(tiny_centers, rounds=5, eval_every=2), tiny_data)
        assert [r.round_index for r in report.rounds] == [2, 4, 5]

    def test_checkpoints(self, tiny_centers, tiny_data, tmp_path):
        report = run_federated(tiny_config(tiny_centers, checkpoint_dir=str(tmp_path)), tiny_data)
        saved = sorted(p.name for p in (tmp_path / 'checkpoints').glob('*.flck'))
        assert saved == ['fedavg_round001.flck', 'fedavg_round002.flck']
        assert load_checkpoint(tmp_path / 'checkpoints' / 'fedavg_round002.flck').equals(report.final_params)

    def test_datasets_need_a_large_center(self, tiny_centers, tiny_data):
        with pytest.raises(ConfigurationError):
            run_federated(tiny_config(tiny_centers), [tiny_data[2]])


class TestRunCentralized:
    def test_pools_large_centers(self, tiny_centers, tiny_data):
        report = run_centralized(tiny_config(tiny_centers), tiny_data)
        assert report.model_name == 'centralized'
        assert report.kappa == []
        assert report.epochs_trained == 2
        assert report.final_round.pools['limited']['n'] == 3

    def test_single_center_matches_federated(self):
        profile = tiny_profile(1, n_train=5)
        data = generate_federation([profile, tiny_profile(3, is_large=False)])
        config = tiny_config([profile, tiny_profile(3, is_large=False)], rounds=3)
        federated = run_federated(config, data)
        centralized = run_centralized(config, data)
        assert centralized.final_params.equals(federated.final_params)
        assert centralized.digest() == federated.digest()


class TestRunSuite:
    def test_all_models(self, tiny_centers, tiny_data):
        suite = run_suite(tiny_config(tiny_centers, rounds=1), tiny_data)
        assert suite.model_names == list(SUITE_MODELS)
        assert set(suite.rankings) == {'large', 'limited'}
        for ranking in suite.rankings.values():
            assert sorted(ranking.names) == sorted(SUITE_MODELS)
            scores = [score for _, score in ranking.entries]
            assert scores == sorted(scores)
        assert {r.dataset_digest for r in suite.reports.values()} == {suite.dataset_digest}
        assert len(suite.patients()) == 6 * 7

    def test_subset_and_rule_parameters(self, tiny_centers, tiny_data):
        config = tiny_config(tiny_centers, rounds=1, rule=AggregationRule('beta', beta=0.5, mu=0.2))
        suite = run_suite(config, tiny_data, models=('beta', 'fedprox'))
        assert suite.reports['beta'].rule == {'name': 'beta', 'beta': 0.5}
        assert suite.reports['fedprox'].rule == {'name': 'fedprox', 'mu': 0.2}

    def test_limited_pool_skipped_when_empty(self, tiny_centers):
        centers = tiny_centers[:2]
        suite = run_suite(tiny_config(centers, rounds=1), generate_federation(centers), models=('fedavg', 'softmax'))
        assert set(suite.rankings) == {'large'}
        assert math.isnan(suite.reports['fedavg'].final_pre('limited'))


@pytest.mark.slow
class TestDeskExperiment:
    def test_fedavg_desk_run(self):
        report = run_federated(FederationConfig())
        final = report.final_round.pools
        assert final['large']['dsc'] >= 0.70
        assert abs(final['limited']['dsc'] - final['large']['dsc']) <= 0.15
        by_round = {r.round_index: r for r in report.rounds}
        assert by_round[30].pre_large <= by_round[5].pre_large

    def test_fedavg_ranks_before_beta(self):
        config = FederationConfig()
        suite = run_suite(config, models=('fedavg', 'beta'))
        assert suite.reports['fedavg'].final_pre('large') <= suite.reports['beta'].final_pre('large')
        assert suite.rankings['large'].names[0] == 'fedavg' or \
            suite.reports['fedavg'].final_pre('large') == suite.reports['beta'].final_pre('large')

    def test_fedavg_before_beta_on_alternate_seeds(self):
        holds = 0
        for seed in (1, 2, 3):
            suite = run_suite(FederationConfig(master_seed=seed), models=('fedavg', 'beta'))
            holds += suite.reports['fedavg'].final_pre('large') <= suite.reports['beta'].final_pre('large')
        assert holds >= 2
