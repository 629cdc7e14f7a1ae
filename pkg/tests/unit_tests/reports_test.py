# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

import sys
sys.path.append("./")

from fedlesion.reports import (
    PER_PATIENT_CSV, ROUNDS_CSV, REPORT_JSON, RANKING_CSV, RANKING_TXT, SUMMARY_CSV, SUMMARY_TXT,
    SUMMARY_BY_CATEGORY_CSV, write_report, write_suite, summarize_metrics, format_summary_table,
    read_per_patient, rank_files, summarize_directory, write_predictions, evaluate_predictions,
    heterogeneity_frame, rounds_frame,
)
from fedlesion.formatting import PER_PATIENT_COLUMNS, ROUNDS_COLUMNS, EVALUATE_COLUMNS
from fedlesion.orchestrator import FederationConfig, run_federated, run_suite
from fedlesion.aggregation import AggregationRule
from fedlesion.segmodel import ModelConfig
from fedlesion.trainer import TrainConfig
from fedlesion.rasters import write_federation, write_raster, prediction_file
from fedlesion.synthdata import generate_federation
from fedlesion.common import ReportFormatError

import json
import pandas as pd
import pytest

from conftest import tiny_profile

SMALL = ModelConfig(layers=((2, 4, 3), (4, 1, 1)))
CENTERS = [tiny_profile(1, n_train=4, n_test=2), tiny_profile(2, n_train=6, n_test=2),
           tiny_profile(3, is_large=False, n_test=3)]
SUITE_SUBSET = ('fedavg', 'softmax', 'centralized')


def tiny_config(**overrides) -> FederationConfig:
    values = dict(rounds=2, rule=AggregationRule.fedavg(), train=TrainConfig(epochs_per_round=1, batch_size=2),
                  model=SMALL, centers=CENTERS, master_seed=7)
    values.update(overrides)
    return FederationConfig(**values)


@pytest.fixture(scope="module")
def datasets():
    return generate_federation(CENTERS)


@pytest.fixture(scope="module")
def suite(datasets):
    return run_suite(tiny_config(), datasets, models=SUITE_SUBSET)


class TestRunOutputs:
    def test_write_report(self, datasets, tmp_path):
        report = run_federated(tiny_config(), datasets)
        paths = write_report(report, tmp_path / 'fedavg')
        assert set(paths) == {REPORT_JSON, PER_PATIENT_CSV, ROUNDS_CSV}
        patients = pd.read_csv(paths[PER_PATIENT_CSV])
        assert list(patients.columns) == PER_PATIENT_COLUMNS
        assert len(patients) == 7
        rounds = pd.read_csv(paths[ROUNDS_CSV])
        assert list(rounds.columns) == ROUNDS_COLUMNS
        assert rounds[['round', 'pool']].values.tolist() == [[1, 'large'], [1, 'limited'], [2, 'large'], [2, 'limited']]
        payload = json.loads(paths[REPORT_JSON].read_text())
        assert payload['model'] == 'fedavg'
        assert payload['report_digest'] == report.digest()

    def test_nan_becomes_null(self, tmp_path):
        centers = CENTERS[:2]
        report = run_federated(tiny_config(centers=centers, rounds=1), generate_federation(centers))
        paths = write_report(report, tmp_path)
        payload = json.loads(paths[REPORT_JSON].read_text())
        assert payload['final']['limited']['pre'] is None
        assert payload['final']['limited']['n'] == 0

    def test_rounds_frame_rows(self, suite):
        frame = rounds_frame(suite.reports.values())
        assert len(frame) == len(SUITE_SUBSET) * 2 * 2
        assert list(frame['rule'].unique()) == list(SUITE_SUBSET)


class TestSuiteOutputs:
    def test_files(self, suite, tmp_path):
        paths = write_suite(suite, tmp_path)
        for name in (REPORT_JSON, PER_PATIENT_CSV, ROUNDS_CSV, RANKING_CSV, RANKING_TXT,
                     SUMMARY_CSV, SUMMARY_BY_CATEGORY_CSV, SUMMARY_TXT):
            assert paths[name].exists()
        ranking = pd.read_csv(paths[RANKING_CSV])
        assert list(ranking.columns) == ['pool', 'rank', 'model', 'pre']
        assert len(ranking) == 2 * len(SUITE_SUBSET)
        assert 'large pool (PRE, lower is better)' in paths[RANKING_TXT].read_text()
        summary = pd.read_csv(paths[SUMMARY_CSV])
        assert summary[['model', 'pool']].values.tolist()[:2] == [['fedavg', 'large'], ['fedavg', 'limited']]

    def test_byte_identical_across_thread_counts(self, datasets, tmp_path):
        one = run_suite(tiny_config(workers=1), datasets, models=SUITE_SUBSET)
        many = run_suite(tiny_config(workers=4), datasets, models=SUITE_SUBSET)
        write_suite(one, tmp_path / 'one')
        write_suite(many, tmp_path / 'many')
        for name in (ROUNDS_CSV, PER_PATIENT_CSV):
            assert (tmp_path / 'one' / name).read_bytes() == (tmp_path / 'many' / name).read_bytes()

    def test_rank_files_recovers_ranking(self, suite, tmp_path):
        write_suite(suite, tmp_path)
        rankings = rank_files([tmp_path / PER_PATIENT_CSV])
        for pool in ('large', 'limited'):
            assert rankings[pool].names == suite.rankings[pool].names
            for (_, got), (_, expected) in zip(rankings[pool].entries, suite.rankings[pool].entries):
                assert got == pytest.approx(expected, abs=1e-12)

    def test_summarize_directory(self, suite, tmp_path):
        write_suite(suite, tmp_path)
        (tmp_path / SUMMARY_CSV).unlink()
        text = summarize_directory(tmp_path)
        assert 'large pool' in text and 'limited pool' in text
        assert (tmp_path / SUMMARY_CSV).exists()


class TestSummaries:
    def frame(self):
        return pd.DataFrame({
            'model': ['a', 'a', 'b', 'b'],
            'pool': ['large'] * 4,
            'category': ['S', 'M', 'S', 'M'],
            'pre': [0.2, 0.4, 0.1, 0.1],
            'dsc': [0.5, 1.0, 0.9, 0.9],
            'avd_ml': [1.0, 3.0, 0.5, 0.5],
            'ald': [0, 2, 1, 1],
            'lf1': [1.0, 0.0, 0.5, 0.5],
        })

    def test_mean_and_population_std(self):
        summary = summarize_metrics(self.frame())
        a = summary[summary['model'] == 'a'].iloc[0]
        assert a['n'] == 2
        assert a['dsc_mean'] == pytest.approx(0.75)
        assert a['dsc_std'] == pytest.approx(0.25)
        assert a['pre_mean'] == pytest.approx(0.3)
        assert summary['model'].tolist() == ['a', 'b']

    def test_by_category(self):
        summary = summarize_metrics(self.frame(), by=('model', 'pool', 'category'))
        assert len(summary) == 4
        assert (summary['n'] == 1).all()

    def test_missing_columns(self):
        with pytest.raises(ReportFormatError):
            summarize_metrics(self.frame().drop(columns=['lf1']))

    def test_best_values_marked(self):
        text = format_summary_table(summarize_metrics(self.frame()))
        assert '**0.90 ± 0.00**' in text  # higher DSC wins
        assert '_0.75 ± 0.25_' in text
        assert '**0.10 ± 0.00**' in text  # lower PRE wins


class TestEvaluatePredictions:
    def test_matches_in_memory_metrics(self, datasets, tmp_path):
        report = run_federated(tiny_config(), datasets)
        write_federation(datasets, tmp_path / 'data')
        count = write_predictions(report.final_params, datasets, SMALL, tmp_path / 'preds')
        assert count == 7
        frame = evaluate_predictions(tmp_path / 'data', tmp_path / 'preds')
        assert list(frame.columns) == EVALUATE_COLUMNS
        expected = {row['patient_id']: row for row in report.patients}
        assert sorted(frame['patient_id']) == sorted(expected)
        for row in frame.to_dict('records'):
            ref = expected[row['patient_id']]
            for key in ('dsc', 'avd_ml', 'lf1', 'gt_volume_ml'):
                assert row[key] == pytest.approx(ref[key], abs=1e-12)
            for key in ('ald', 'gt_lesion_count', 'category', 'pool'):
                assert row[key] == ref[key]

    def test_training_studies_are_not_cohort_members(self, datasets, tmp_path):
        write_federation(datasets, tmp_path / 'data')
        (tmp_path / 'preds').mkdir()
        train_study, test_study = datasets[0].train[0], datasets[0].test[0]
        for study in (train_study, test_study):
            write_raster(tmp_path / 'preds' / prediction_file(study.patient_id), study.gt_mask, study.spacing)
        frame = evaluate_predictions(tmp_path / 'data', tmp_path / 'preds').set_index('patient_id')
        assert frame.loc[train_study.patient_id, 'pool'] == 'train'
        assert frame.loc[test_study.patient_id, 'pool'] == 'large'

    def test_no_predictions(self, datasets, tmp_path):
        write_federation(datasets, tmp_path / 'data')
        (tmp_path / 'empty').mkdir()
        with pytest.raises(ReportFormatError):
            evaluate_predictions(tmp_path / 'data', tmp_path / 'empty')

    def test_evaluate_output_can_be_ranked(self, datasets, tmp_path):
        report = run_federated(tiny_config(), datasets)
        write_federation(datasets, tmp_path / 'data')
        write_predictions(report.final_params, datasets, SMALL, tmp_path / 'preds')
        path = tmp_path / 'fedavg.csv'
        evaluate_predictions(tmp_path / 'data', tmp_path / 'preds').to_csv(path, index=False)
        frame = read_per_patient(path)
        assert set(frame['model']) == {'fedavg'}
        rankings = rank_files([path])
        assert rankings['large'].entries[0][1] == pytest.approx(report.final_pre('large'), abs=1e-12)


class TestReadPerPatient:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ReportFormatError):
            read_per_patient(tmp_path / 'absent.csv')

    def test_missing_columns(self, tmp_path):
        path = tmp_path / 'bad.csv'
        path.write_text('patient_id,dsc\np1,0.5\n')
        with pytest.raises(ReportFormatError, match="missing columns"):
            read_per_patient(path)

    def test_defaults(self, tmp_path):
        path = tmp_path / 'mine.csv'
        pd.DataFrame([{'patient_id': '001', 'center_id': 1, 'category': 'N', 'dsc': 1.0, 'avd_ml': 0.0,
                       'ald': 0, 'lf1': 1.0, 'gt_volume_ml': 0.0, 'gt_lesion_count': 0}]).to_csv(path, index=False)
        frame = read_per_patient(path)
        assert frame['model'].tolist() == ['mine']
        assert frame['pool'].tolist() == ['all']
        assert frame['patient_id'].tolist() == ['001']


def test_heterogeneity_frame(datasets):
    frame = heterogeneity_frame(datasets)
    assert frame['center_id'].tolist() == [1, 2, 3]
    assert {'share_N', 'share_S', 'share_M', 'share_L', 'dwi_lesion_mean'} <= set(frame.columns)
