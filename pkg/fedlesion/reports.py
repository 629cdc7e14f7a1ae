# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# reports.py
"""
FedLesion - Reports Module

Tabular outputs of experiments: report.json, per_patient.csv, rounds.csv,
ranking and summary tables, plus evaluation of prediction rasters written
by other tools. Tables are pandas DataFrames; CSVs are written without an
index and with '\\n' line endings so identical runs give identical bytes.
"""

import json, logging, math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import pandas as pd

from .common import ReportFormatError
from .evaluation import EvaluationConfig, SegmentationMetrics, evaluate_patient
from .formatting import EVALUATE_COLUMNS, PER_PATIENT_COLUMNS, POOLS, ROUNDS_COLUMNS, SUMMARY_METRICS, TRAIN_POOL
from .orchestrator import ExperimentReport, SuiteReport, evaluation_cohort
from .params import ParameterSet
from .ranking import ModelRanking, pre, rank_models, relative_errors
from .rasters import prediction_file, read_manifest, read_mask, write_raster
from .segmodel import ModelConfig, forward, predict_mask
from .synthdata import CenterDataset, summarize_center

logger = logging.getLogger(__package__)

PathLike = Union[str, Path]

REPORT_JSON = 'report.json'
PER_PATIENT_CSV = 'per_patient.csv'
ROUNDS_CSV = 'rounds.csv'
RANKING_CSV = 'ranking.csv'
RANKING_TXT = 'ranking.txt'
SUMMARY_CSV = 'summary.csv'
SUMMARY_BY_CATEGORY_CSV = 'summary_by_category.csv'
SUMMARY_TXT = 'summary.txt'
HETEROGENEITY_CSV = 'heterogeneity.csv'

_HIGHER_IS_BETTER = ('dsc', 'lf1')
_REQUIRED_METRIC_COLUMNS = ['patient_id', 'center_id', 'category', 'dsc', 'avd_ml', 'ald', 'lf1',
                            'gt_volume_ml', 'gt_lesion_count']


def _json_safe(value: Any) -> Any:
    # NaN and infinities are not JSON; they become null
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_json_safe(payload), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def patients_frame(rows: Iterable[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=PER_PATIENT_COLUMNS)


def rounds_frame(reports: Iterable[ExperimentReport]) -> pd.DataFrame:
    """
    One row per (model, evaluated round, pool) with the pool's PRE and mean metrics.
    """
    records: List[Dict[str, Any]] = []
    for report in reports:
        for record in report.rounds:
            for pool in POOLS:
                means = record.pools[pool]
                row = {'round': record.round_index, 'rule': report.model_name, 'pool': pool}
                row.update({m: means[m] for m in SUMMARY_METRICS})
                records.append(row)
    return pd.DataFrame(records, columns=ROUNDS_COLUMNS)


def ranking_frame(rankings: Mapping[str, ModelRanking]) -> pd.DataFrame:
    records = [
        {'pool': pool, 'rank': position, 'model': name, 'pre': score}
        for pool, ranking in rankings.items()
        for position, (name, score) in enumerate(ranking.entries, start=1)
    ]
    return pd.DataFrame(records, columns=['pool', 'rank', 'model', 'pre'])


def format_ranking(rankings: Mapping[str, ModelRanking]) -> str:
    lines: List[str] = []
    for pool, ranking in rankings.items():
        lines.append(f"{pool} pool (PRE, lower is better)")
        for position, (name, score) in enumerate(ranking.entries, start=1):
            lines.append(f"  {position}. {name:<12} {score:.4f}")
    return '\n'.join(lines) + '\n'


def summarize_metrics(frame: pd.DataFrame, by: Sequence[str] = ('model', 'pool')) -> pd.DataFrame:
    """
    Mean and (population) standard deviation of PRE, DSC, AVD, ALD and LF1 per group,
    groups in order of first appearance.

    Returns:
        pd.DataFrame: the `by` columns, 'n', then '<metric>_mean' and '<metric>_std' per metric.
    """
    missing = [c for c in list(by) + SUMMARY_METRICS if c not in frame.columns]
    if missing:
        raise ReportFormatError(f"Cannot summarize: missing columns {missing}")
    grouped = frame.groupby(list(by), sort=False)
    out = grouped.size().rename('n').to_frame()
    for metric in SUMMARY_METRICS:
        out[f'{metric}_mean'] = grouped[metric].mean()
        out[f'{metric}_std'] = grouped[metric].std(ddof=0)
    return out.reset_index()


def format_summary_table(summary: pd.DataFrame, label: str = 'model', group: str = 'pool') -> str:
    """
    Text table of 'mean ± std' per metric and group; in each column the best value is
    wrapped in '**' and the second best in '_'.
    """
    blocks: List[str] = []
    for group_value, part in summary.groupby(group, sort=False):
        table = pd.DataFrame({label: part[label].astype(str).tolist()})
        for metric in SUMMARY_METRICS:
            means = part[f'{metric}_mean'].reset_index(drop=True)
            stds = part[f'{metric}_std'].reset_index(drop=True)
            cells = [f"{m:.2f} ± {s:.2f}" for m, s in zip(means, stds)]
            ordered = means.dropna().sort_values(ascending=metric not in _HIGHER_IS_BETTER, kind='mergesort').index
            if len(ordered) > 0:
                cells[ordered[0]] = f"**{cells[ordered[0]]}**"
            if len(ordered) > 1:
                cells[ordered[1]] = f"_{cells[ordered[1]]}_"
            table[metric.upper()] = cells
        blocks.append(f"{group_value} pool\n{table.to_string(index=False)}")
    return '\n\n'.join(blocks) + '\n'


def _write_summaries(patients: pd.DataFrame, directory: Path) -> Dict[str, Path]:
    summary = summarize_metrics(patients, by=('model', 'pool'))
    by_category = summarize_metrics(patients, by=('model', 'pool', 'category'))
    text_path = directory / SUMMARY_TXT
    text_path.write_text(format_summary_table(summary), encoding='utf-8')
    return {
        SUMMARY_CSV: write_csv(summary, directory / SUMMARY_CSV),
        SUMMARY_BY_CATEGORY_CSV: write_csv(by_category, directory / SUMMARY_BY_CATEGORY_CSV),
        SUMMARY_TXT: text_path,
    }


def write_report(report: ExperimentReport, directory: PathLike) -> Dict[str, Path]:
    """
    Write report.json, per_patient.csv and rounds.csv of one run.
    """
    directory = Path(directory)
    paths = {
        REPORT_JSON: write_json(report.to_dict(), directory / REPORT_JSON),
        PER_PATIENT_CSV: write_csv(patients_frame(report.patients), directory / PER_PATIENT_CSV),
        ROUNDS_CSV: write_csv(rounds_frame([report]), directory / ROUNDS_CSV),
    }
    logger.info(f"Report of '{report.model_name}' written to {directory}")
    return paths


def write_suite(suite: SuiteReport, directory: PathLike) -> Dict[str, Path]:
    """
    Write the suite outputs: report.json, per_patient.csv and rounds.csv over all models,
    ranking.csv/.txt, and the summary tables.
    """
    directory = Path(directory)
    patients = patients_frame(suite.patients())
    paths = {
        REPORT_JSON: write_json(suite.to_dict(), directory / REPORT_JSON),
        PER_PATIENT_CSV: write_csv(patients, directory / PER_PATIENT_CSV),
        ROUNDS_CSV: write_csv(rounds_frame(suite.reports.values()), directory / ROUNDS_CSV),
        RANKING_CSV: write_csv(ranking_frame(suite.rankings), directory / RANKING_CSV),
    }
    ranking_txt = directory / RANKING_TXT
    ranking_txt.write_text(format_ranking(suite.rankings), encoding='utf-8')
    paths[RANKING_TXT] = ranking_txt
    paths.update(_write_summaries(patients, directory))
    logger.info(f"Suite of {len(suite.reports)} models written to {directory}")
    return paths


def read_per_patient(path: PathLike) -> pd.DataFrame:
    """
    Read a per-patient metric CSV (per_patient.csv or the output of `evaluate`). A missing
    'model' column is filled with the file stem and a missing 'pool' column with 'all'.

    Raises:
        ReportFormatError: if a metric column is missing.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip', dtype={'patient_id': str, 'category': str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReportFormatError(f"Cannot read {path}: {e}")
    missing = [c for c in _REQUIRED_METRIC_COLUMNS if c not in frame.columns]
    if missing:
        raise ReportFormatError(f"{path} is missing columns {missing}")
    if 'model' not in frame.columns:
        frame['model'] = path.stem
    if 'pool' not in frame.columns:
        frame['pool'] = 'all'
    return frame


def _metrics_from_row(row: Dict[str, Any]) -> SegmentationMetrics:
    return SegmentationMetrics(
        dsc=float(row['dsc']),
        avd_ml=float(row['avd_ml']),
        ald=int(row['ald']),
        lf1=float(row['lf1']),
        gt_volume_ml=float(row['gt_volume_ml']),
        gt_lesion_count=int(row['gt_lesion_count']),
        category=str(row['category']),
    )


def rank_from_frame(frame: pd.DataFrame) -> Dict[str, ModelRanking]:
    """
    Rank the models of a per-patient table by PRE, per pool. Relative errors are recomputed
    from the raw metrics, so any per-patient CSV with the evaluate columns can be ranked.
    """
    rankings: Dict[str, ModelRanking] = {}
    for pool, part in frame.groupby('pool', sort=False):
        scores = {}
        for model, rows in part.groupby('model', sort=False):
            errors = [relative_errors(_metrics_from_row(r)) for r in rows.to_dict('records')]
            scores[str(model)] = pre(errors)
        rankings[str(pool)] = rank_models(scores)
    return rankings


def rank_files(paths: Sequence[PathLike]) -> Dict[str, ModelRanking]:
    if not paths:
        raise ReportFormatError("No per-patient files to rank.")
    frame = pd.concat([read_per_patient(p) for p in paths], ignore_index=True)
    return rank_from_frame(frame)


def summarize_directory(directory: PathLike) -> str:
    """
    Rebuild the summary tables from the per_patient.csv of a run or suite directory;
    returns the text table.
    """
    directory = Path(directory)
    patients = read_per_patient(directory / PER_PATIENT_CSV)
    paths = _write_summaries(patients, directory)
    return paths[SUMMARY_TXT].read_text(encoding='utf-8')


def write_predictions(params: ParameterSet, datasets: Sequence[CenterDataset], model: ModelConfig,
                      directory: PathLike) -> int:
    """
    Write the predicted mask of every evaluated study as '<patient_id>_pred.raw'.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = 0
    for _, study in evaluation_cohort(datasets):
        mask = predict_mask(forward(params, study, model), model.threshold)
        write_raster(directory / prediction_file(study.patient_id), mask, study.spacing)
        count += 1
    logger.info(f"Wrote {count} predictions to {directory}")
    return count


def evaluate_predictions(dataset_dir: PathLike, predictions_dir: PathLike,
                         evaluation: EvaluationConfig = EvaluationConfig()) -> pd.DataFrame:
    """
    Score prediction rasters against the ground truth of a generated dataset. Every study of
    the manifest with a '<patient_id>_pred.raw' in predictions_dir is evaluated with the
    ground-truth spacing. Test studies carry their cohort as pool, training studies the
    'train' pool.

    Returns:
        pd.DataFrame: one row per evaluated patient, EVALUATE_COLUMNS.

    Raises:
        ReportFormatError: if no prediction matches a study.
        RasterFormatError: for malformed rasters.
        DimensionMismatchError: if a prediction and its ground truth differ in shape.
    """
    dataset_dir, predictions_dir = Path(dataset_dir), Path(predictions_dir)
    manifest = read_manifest(dataset_dir)
    large = {int(c['center_id']): bool(c['is_large']) for c in manifest['centers']}
    rows: List[Dict[str, Any]] = []
    for entry in manifest['studies']:
        pred_path = predictions_dir / prediction_file(entry['patient_id'])
        if not pred_path.exists():
            logger.debug(f"No prediction for {entry['patient_id']}")
            continue
        gt, spacing = read_mask(dataset_dir / entry['files']['mask'])
        pred, _ = read_mask(pred_path)
        metrics = evaluate_patient(pred, gt, spacing, config=evaluation)
        row = {'patient_id': entry['patient_id'], 'center_id': int(entry['center_id'])}
        row.update(metrics.to_dict())
        if entry.get('split') == 'train':
            row['pool'] = TRAIN_POOL
        else:
            row['pool'] = 'large' if large.get(int(entry['center_id']), False) else 'limited'
        rows.append(row)
    if not rows:
        raise ReportFormatError(f"No prediction in {predictions_dir} matches a study of {dataset_dir}")
    return pd.DataFrame(rows, columns=EVALUATE_COLUMNS)


def heterogeneity_frame(datasets: Sequence[CenterDataset]) -> pd.DataFrame:
    return pd.DataFrame([summarize_center(ds) for ds in datasets])
