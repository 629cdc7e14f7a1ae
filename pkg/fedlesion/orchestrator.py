# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# orchestrator.py
"""
FedLesion - Orchestrator Module

Runs a federated experiment over the large centers, the centralized baseline
trained on their pooled training data, and the suite of all five aggregation
rules plus the baseline ranked by PRE on the large and limited pools.

Every run is a pure function of its FederationConfig: the worker count only
changes how fast local trainings and evaluations finish, never their results.
"""

import logging, math, time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from .__version__ import __REPORT_SCHEMA_VERSION__
from .aggregation import AggregationRule, aggregate, compute_kappa
from .common import ConfigurationError, EmptyDatasetError, FedLesionError, json_digest
from .evaluation import EvaluationConfig, SegmentationMetrics, evaluate_patient
from .formatting import CATEGORIES, CENTRALIZED_NAME, POOLS, RULE_NAMES
from .params import CheckpointMetadata, ParameterSet, save_checkpoint
from .ranking import ModelRanking, RelativeErrors, pre, rank_models, relative_errors
from .rasters import profile_echo
from .segmodel import ModelConfig, forward, init_params, predict_mask
from .signals import get_trace, increment_counter, record_histogram, send_event
from .synthdata import (
    CenterDataset, CenterProfile, PhantomStudy, dataset_digest, default_federation,
    derive_seed, generate_federation,
)
from .trainer import TrainConfig, train_local

logger = logging.getLogger(__package__)

METRIC_NAMES: Tuple[str, ...] = ('dsc', 'avd_ml', 'ald', 'lf1')
SUITE_MODELS: Tuple[str, ...] = RULE_NAMES + (CENTRALIZED_NAME,)
CHECKPOINT_DIRNAME = 'checkpoints'

T = TypeVar('T')
R = TypeVar('R')


@dataclass(frozen=True)
class FederationConfig:
    """
    Immutable description of one experiment. Usually built with Configuration.build().

    Parameters:
        rounds (int): federated rounds (centralized runs train rounds x epochs_per_round epochs).
        rule (AggregationRule): server-side aggregation rule.
        train (TrainConfig): local optimizer settings; the seed is replaced per center.
        model (ModelConfig): network and loss.
        centers (Sequence[CenterProfile]): the federation; None means the default desk federation
            seeded from master_seed.
        master_seed (int): seed of the common initial model (and of the default centers).
        eval_every (int): evaluate every this many rounds; the last round is always evaluated.
        evaluation (EvaluationConfig): lesion connectivity and LF1 overlap.
        per_center_init (bool): seed each large center's initial model separately and aggregate
            them before round 1 instead of broadcasting one common model.
        workers (int): thread pool size for local trainings and evaluation.
        experiment_name (str): label copied into reports and telemetry.
        checkpoint_dir (str, optional): when set, the model is checkpointed at every evaluated round.
    """
    rounds: int = 30
    rule: AggregationRule = field(default_factory=AggregationRule)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    centers: Optional[Sequence[CenterProfile]] = None
    master_seed: int = 2024
    eval_every: int = 1
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    per_center_init: bool = False
    workers: int = 1
    experiment_name: str = 'fedlesion'
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**32:
            raise ConfigurationError(f"master_seed must be an unsigned 32-bit integer, got {self.master_seed}")
        if self.centers is None:
            object.__setattr__(self, 'centers', tuple(default_federation(self.master_seed)))
        else:
            object.__setattr__(self, 'centers', tuple(self.centers))
        if int(self.rounds) < 1:
            raise ConfigurationError(f"rounds must be at least 1, got {self.rounds}")
        if int(self.eval_every) < 1:
            raise ConfigurationError(f"eval_every must be at least 1, got {self.eval_every}")
        if int(self.workers) < 1:
            raise ConfigurationError(f"workers must be at least 1, got {self.workers}")
        ids = [p.center_id for p in self.centers]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"Center ids must be unique, got {ids}")
        if any(i < 1 for i in ids):
            raise ConfigurationError(f"Center ids must be positive, got {ids}")
        if not self.large_centers:
            raise ConfigurationError("A federation needs at least one large center.")
        for profile in self.large_centers:
            if profile.n_train < 1:
                raise ConfigurationError(f"Large center {profile.center_id} has no training patients.")
        sizes = {p.image_size for p in self.centers}
        if len(sizes) > 1:
            raise ConfigurationError(f"All centers must share one image size, got {sorted(sizes)}")

    @property
    def large_centers(self) -> List[CenterProfile]:
        return [p for p in self.centers if p.is_large]

    @property
    def limited_centers(self) -> List[CenterProfile]:
        return [p for p in self.centers if not p.is_large]

    @property
    def total_epochs(self) -> int:
        return self.rounds * self.train.epochs_per_round

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rounds': self.rounds,
            'rule': self.rule.to_dict(),
            'train': asdict(self.train),
            'model': {
                'layers': [list(layer) for layer in self.model.layers],
                'dice_weight': self.model.dice_weight,
                'threshold': self.model.threshold,
                'activation': self.model.activation,
            },
            'evaluation': asdict(self.evaluation),
            'centers': [profile_echo(p) for p in self.centers],
            'master_seed': self.master_seed,
            'eval_every': self.eval_every,
            'per_center_init': self.per_center_init,
            'workers': self.workers,
            'experiment_name': self.experiment_name,
        }


@dataclass(frozen=True)
class RoundRecord:
    """
    Evaluation of the model after one round.

    Parameters:
        round_index (int): 1-based round.
        pools (Dict[str, Dict[str, float]]): per pool, PRE and the mean DSC, AVD, ALD and LF1,
            plus 'n' patients. Values are NaN for an empty pool.
        per_center (Dict[int, Dict[str, float]]): the same means per evaluated center.
        per_category (Dict[str, Dict[str, float]]): per pool, PRE of each lesion category present.
    """
    round_index: int
    pools: Dict[str, Dict[str, float]]
    per_center: Dict[int, Dict[str, float]]
    per_category: Dict[str, Dict[str, float]]

    @property
    def pre_large(self) -> float:
        return self.pools['large']['pre']

    @property
    def pre_limited(self) -> float:
        return self.pools['limited']['pre']

    def to_dict(self) -> Dict[str, Any]:
        return {
            'round': self.round_index,
            'pools': self.pools,
            'per_center': {str(k): v for k, v in self.per_center.items()},
            'per_category': self.per_category,
        }


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    model_name: str
    rule: Dict[str, Any]
    config: Dict[str, Any]
    rounds: List[RoundRecord]
    patients: List[Dict[str, Any]]
    kappa: List[float]
    dataset_digest: str
    final_params_digest: str
    epochs_trained: int
    duration_s: float = 0.0
    final_params: Optional[ParameterSet] = field(default=None, repr=False)

    @property
    def final_round(self) -> RoundRecord:
        return self.rounds[-1]

    def final_pre(self, pool: str) -> float:
        return self.final_round.pools[pool]['pre']

    def pool_errors(self, pool: str) -> List[RelativeErrors]:
        return [row_errors(row) for row in self.patients if row['pool'] == pool]

    def digest(self) -> str:
        """
        SHA-256 of what the run produced: data, final weights, round records and per-patient
        metrics. The model label and the wall clock are left out.
        """
        return json_digest({
            'dataset_digest': self.dataset_digest,
            'final_params_digest': self.final_params_digest,
            'rounds': [r.to_dict() for r in self.rounds],
            'patients': [{k: v for k, v in row.items() if k != 'model'} for row in self.patients],
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': __REPORT_SCHEMA_VERSION__,
            'model': self.model_name,
            'rule': self.rule,
            'config': self.config,
            'kappa': self.kappa,
            'epochs_trained': self.epochs_trained,
            'dataset_digest': self.dataset_digest,
            'final_params_digest': self.final_params_digest,
            'report_digest': self.digest(),
            'duration_s': self.duration_s,
            'final': self.final_round.pools,
            'rounds': [r.to_dict() for r in self.rounds],
        }


@dataclass(frozen=True, eq=False)
class SuiteReport:
    reports: Dict[str, ExperimentReport]
    rankings: Dict[str, ModelRanking]
    dataset_digest: str

    @property
    def model_names(self) -> List[str]:
        return list(self.reports)

    def patients(self) -> List[Dict[str, Any]]:
        return [row for report in self.reports.values() for row in report.patients]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': __REPORT_SCHEMA_VERSION__,
            'dataset_digest': self.dataset_digest,
            'models': {name: report.to_dict() for name, report in self.reports.items()},
            'rankings': {pool: ranking.entries for pool, ranking in self.rankings.items()},
        }


################################################################################
# Seeds and starting points
def common_init_seed(master_seed: int) -> int:
    return derive_seed(master_seed, 0)


def center_train_seed(profile: CenterProfile) -> int:
    return derive_seed(profile.seed, 1)


def center_init_seed(profile: CenterProfile) -> int:
    return derive_seed(profile.seed, 2)


def initial_params(config: FederationConfig, datasets: Optional[Sequence[CenterDataset]] = None) -> ParameterSet:
    """
    The round-1 starting point: one model seeded from master_seed, or with per_center_init
    the rule's aggregate of independently seeded per-center models. When datasets are given
    the large centers and their training sizes come from them rather than from config.centers.
    """
    if not config.per_center_init:
        return init_params(config.model, common_init_seed(config.master_seed))
    if datasets is None:
        large = [(p, p.n_train) for p in config.large_centers]
    else:
        large = [(ds.profile, len(ds.train)) for ds in datasets if ds.profile.is_large]
    inits = [init_params(config.model, center_init_seed(p)) for p, _ in large]
    return aggregate(config.rule, inits, [n for _, n in large])


def local_train_config(config: FederationConfig, profile: CenterProfile) -> TrainConfig:
    # FedProx carries its own mu
    mu = config.rule.mu if config.rule.uses_anchor else config.train.mu
    return replace(config.train, seed=center_train_seed(profile), mu=mu)


def _map_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    # Results come back in input order whatever the pool size
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


################################################################################
# Evaluation
def patient_row(model_name: str, pool: str, patient_id: str, center_id: int,
                metrics: SegmentationMetrics) -> Dict[str, Any]:
    errors = relative_errors(metrics)
    row: Dict[str, Any] = {
        'model': model_name,
        'pool': pool,
        'patient_id': patient_id,
        'center_id': int(center_id),
        'category': metrics.category,
        'dsc': metrics.dsc,
        'avd_ml': metrics.avd_ml,
        'ald': metrics.ald,
        'lf1': metrics.lf1,
        'gt_volume_ml': metrics.gt_volume_ml,
        'gt_lesion_count': metrics.gt_lesion_count,
    }
    row.update(errors.to_dict())
    row['pre'] = errors.mean()
    return row


def row_errors(row: Dict[str, Any]) -> RelativeErrors:
    return RelativeErrors(
        delta_dsc=float(row['delta_dsc']),
        delta_avd=float(row['delta_avd']),
        delta_ald=float(row['delta_ald']),
        delta_lf1=float(row['delta_lf1']),
    )


def evaluation_cohort(datasets: Sequence[CenterDataset]) -> List[Tuple[str, PhantomStudy]]:
    """
    (pool, study) pairs: the test split of every large center and every study of every
    limited center, in center order.
    """
    cohort: List[Tuple[str, PhantomStudy]] = []
    for ds in datasets:
        if ds.profile.is_large:
            cohort.extend(('large', s) for s in ds.test)
        else:
            cohort.extend(('limited', s) for s in ds.all_studies())
    return cohort


def _evaluate_study(item: Tuple[str, PhantomStudy], params: ParameterSet, model: ModelConfig,
                    evaluation: EvaluationConfig, model_name: str) -> Dict[str, Any]:
    pool, study = item
    mask = predict_mask(forward(params, study, model), model.threshold)
    metrics = evaluate_patient(mask, study.gt_mask, study.spacing, config=evaluation)
    return patient_row(model_name, pool, study.patient_id, study.center_id, metrics)


def evaluate_model(params: ParameterSet, datasets: Sequence[CenterDataset], model: ModelConfig,
                   evaluation: EvaluationConfig = EvaluationConfig(), model_name: str = '',
                   workers: int = 1) -> List[Dict[str, Any]]:
    """
    Per-patient metric rows of a model on the evaluation cohort (see evaluation_cohort).
    """
    fn = partial(_evaluate_study, params=params, model=model, evaluation=evaluation, model_name=model_name)
    return _map_ordered(fn, evaluation_cohort(datasets), workers)


def _fmean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else float('nan')


def _means(rows: Sequence[Dict[str, Any]]) -> Dict[str, float]:
    if not rows:
        out = {'pre': float('nan')}
        out.update({m: float('nan') for m in METRIC_NAMES})
        out['n'] = 0
        return out
    out = {'pre': pre([row_errors(r) for r in rows])}
    out.update({m: _fmean([float(r[m]) for r in rows]) for m in METRIC_NAMES})
    out['n'] = len(rows)
    return out


def round_record(round_index: int, rows: Sequence[Dict[str, Any]]) -> RoundRecord:
    pools = {pool: _means([r for r in rows if r['pool'] == pool]) for pool in POOLS}
    center_ids = sorted({int(r['center_id']) for r in rows})
    per_center = {cid: _means([r for r in rows if r['center_id'] == cid]) for cid in center_ids}
    per_category: Dict[str, Dict[str, float]] = {}
    for pool in POOLS:
        per_category[pool] = {}
        for category in CATEGORIES:
            selected = [row_errors(r) for r in rows if r['pool'] == pool and r['category'] == category]
            if selected:
                per_category[pool][category] = pre(selected)
    return RoundRecord(round_index=round_index, pools=pools, per_center=per_center, per_category=per_category)


################################################################################
# Runs
def _datasets_for(config: FederationConfig, datasets: Optional[Sequence[CenterDataset]]) -> List[CenterDataset]:
    if datasets is None:
        return generate_federation(config.centers, workers=config.workers)
    datasets = list(datasets)
    large = [ds for ds in datasets if ds.profile.is_large]
    if not large:
        raise ConfigurationError("The datasets hold no large center.")
    if any(len(ds.train) == 0 for ds in large):
        raise EmptyDatasetError("Every large center needs training studies.")
    return datasets


def _is_eval_round(round_index: int, config: FederationConfig) -> bool:
    return round_index % config.eval_every == 0 or round_index == config.rounds


def _checkpoint(config: FederationConfig, model_name: str, round_index: int,
                params: ParameterSet, digest: str):
    if config.checkpoint_dir is None:
        return
    path = Path(config.checkpoint_dir) / CHECKPOINT_DIRNAME / f"{model_name}_round{round_index:03d}.flck"
    save_checkpoint(path, params, CheckpointMetadata(
        round_index=round_index, rule=model_name, seed=config.master_seed,
        extra={'dataset_digest': digest},
    ))


def _emit_round(model_name: str, record: RoundRecord):
    for pool in POOLS:
        value = record.pools[pool]['pre']
        if math.isfinite(value):
            record_histogram('round_pre', value, {'pool': pool, 'model': model_name})
    send_event({
        'model': model_name,
        'round': record.round_index,
        'pre_large': record.pre_large,
        'dsc_large': record.pools['large']['dsc'],
        'pre_limited': record.pre_limited,
        'dsc_limited': record.pools['limited']['dsc'],
    }, 'round_completed', {'model': model_name})


def _run_rounds(config: FederationConfig, datasets: List[CenterDataset], model_name: str,
                rule_info: Dict[str, Any], kappa: List[float], span_name: str,
                step: Callable[[ParameterSet, int, Any], ParameterSet]) -> ExperimentReport:
    # Shared round loop of the federated and centralized runs; `step` advances the model by one round
    started = time.perf_counter()
    digest = dataset_digest(datasets)
    records: List[RoundRecord] = []
    rows: List[Dict[str, Any]] = []
    with get_trace(span_name, {'model': model_name, 'rounds': config.rounds,
                               'master_seed': config.master_seed}) as run_span:
        params = initial_params(config, datasets)
        for round_index in range(1, config.rounds + 1):
            with get_trace('federation_round', {'model': model_name, 'round': round_index}) as span:
                params = step(params, round_index, span)
                if _is_eval_round(round_index, config):
                    rows = evaluate_model(params, datasets, config.model, config.evaluation,
                                          model_name, config.workers)
                    record = round_record(round_index, rows)
                    records.append(record)
                    span.add_round_result(record.pools)
                    _emit_round(model_name, record)
                    _checkpoint(config, model_name, round_index, params, digest)
                    logger.info(f"[{model_name}] round {round_index}/{config.rounds}: "
                                f"PRE large={record.pre_large:.4f} limited={record.pre_limited:.4f} "
                                f"DSC large={record.pools['large']['dsc']:.4f}")
            increment_counter('rounds_completed', attributes={'model': model_name})
        run_span.add_attributes({'final_params_digest': params.digest()})

    return ExperimentReport(
        model_name=model_name,
        rule=rule_info,
        config=config.to_dict(),
        rounds=records,
        patients=rows,
        kappa=kappa,
        dataset_digest=digest,
        final_params_digest=params.digest(),
        epochs_trained=config.total_epochs,
        duration_s=time.perf_counter() - started,
        final_params=params,
    )


def _train_center(item: Tuple[CenterDataset, TrainConfig], start: ParameterSet, anchored: bool,
                  round_index: int, model: ModelConfig) -> ParameterSet:
    ds, cfg = item
    return train_local(start, ds.train, cfg, anchor=start if anchored else None,
                       round_index=round_index, model=model)


def run_federated(config: FederationConfig, datasets: Optional[Sequence[CenterDataset]] = None) -> ExperimentReport:
    """
    Federated training over the large centers.

    Each round every large center trains from the current federated model on its own
    training split (FedProx anchors the proximal term at that model), then the server
    combines the local models with the rule's weights over training-set sizes. Limited
    centers are only evaluated.

    Args:
        config (FederationConfig): the experiment.
        datasets (Sequence[CenterDataset], optional): pre-generated data; generated from
            config.centers when None.

    Returns:
        ExperimentReport

    Raises:
        ConfigurationError: for an invalid configuration or datasets without a large center.
        InfeasibleLesionError: if a center's lesion categories cannot be generated.
    """
    datasets = _datasets_for(config, datasets)
    large = [ds for ds in datasets if ds.profile.is_large]
    sizes = [len(ds.train) for ds in large]
    rule = config.rule
    kappa = compute_kappa(rule, sizes)
    for ds, weight in zip(large, kappa.weights):
        record_histogram('kappa_weight', weight, {'rule': rule.name, 'center_id': ds.center_id})
    work = [(ds, local_train_config(config, ds.profile)) for ds in large]
    logger.info(f"Federated run '{rule.name}': {len(large)} large centers, {config.rounds} rounds "
                f"x {config.train.epochs_per_round} epochs, kappa={[round(k, 5) for k in kappa.weights]}")

    def step(params: ParameterSet, round_index: int, span) -> ParameterSet:
        fn = partial(_train_center, start=params, anchored=rule.uses_anchor,
                     round_index=round_index, model=config.model)
        local_models = _map_ordered(fn, work, config.workers)
        span.add_event('local_training', {'centers': len(local_models)})
        increment_counter('local_trainings', by=len(local_models), attributes={'rule': rule.name})
        # only large centers contribute to the aggregate
        assert len(local_models) == len(large)
        aggregated = aggregate(rule, local_models, sizes)
        span.add_event('aggregation', {'rule': rule.name})
        return aggregated

    return _run_rounds(config, datasets, rule.name, rule.to_dict(), list(kappa.weights), 'federated_run', step)


def run_centralized(config: FederationConfig, datasets: Optional[Sequence[CenterDataset]] = None) -> ExperimentReport:
    """
    One model trained on the pooled training splits of all large centers for
    rounds x epochs_per_round epochs, in `rounds` segments evaluated like federated rounds.
    Shuffling uses the first large center's training seed, so with a single large
    center the run matches the federated one exactly.
    """
    datasets = _datasets_for(config, datasets)
    large = [ds for ds in datasets if ds.profile.is_large]
    pooled = [study for ds in large for study in ds.train]
    cfg = replace(config.train, seed=center_train_seed(large[0].profile))
    logger.info(f"Centralized run: {len(pooled)} pooled studies from {len(large)} centers, "
                f"{config.total_epochs} epochs")

    def step(params: ParameterSet, round_index: int, span) -> ParameterSet:
        trained = train_local(params, pooled, cfg, round_index=round_index, model=config.model)
        span.add_event('local_training', {'studies': len(pooled)})
        increment_counter('local_trainings', attributes={'rule': CENTRALIZED_NAME})
        return trained

    return _run_rounds(config, datasets, CENTRALIZED_NAME, {'name': CENTRALIZED_NAME}, [],
                       'centralized_run', step)


def run_suite(config: FederationConfig, datasets: Optional[Sequence[CenterDataset]] = None,
              models: Sequence[str] = SUITE_MODELS) -> SuiteReport:
    """
    Train every model of `models` (the five rules and the centralized baseline by default)
    on the same data and rank them by final PRE, separately on the large and limited pools.
    Beta and mu are taken from config.rule.

    Raises:
        FedLesionError: if two runs saw different data.
    """
    datasets = _datasets_for(config, datasets)
    digest = dataset_digest(datasets)
    reports: Dict[str, ExperimentReport] = {}
    for name in models:
        if name == CENTRALIZED_NAME:
            report = run_centralized(config, datasets)
        else:
            rule = AggregationRule(name, beta=config.rule.beta, mu=config.rule.mu)
            report = run_federated(replace(config, rule=rule), datasets)
        if report.dataset_digest != digest:
            raise FedLesionError(f"Model '{name}' was trained on different data ({report.dataset_digest} != {digest}).")
        reports[name] = report

    rankings: Dict[str, ModelRanking] = {}
    for pool in POOLS:
        scores = {name: r.final_pre(pool) for name, r in reports.items() if math.isfinite(r.final_pre(pool))}
        if scores:
            rankings[pool] = rank_models(scores)
            logger.info(f"Ranking on the {pool} pool: {rankings[pool].entries}")
        else:
            logger.warning(f"No patients in the {pool} pool; it is not ranked.")
    return SuiteReport(reports=reports, rankings=rankings, dataset_digest=digest)
