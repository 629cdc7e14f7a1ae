# -*- coding: utf-8 -*-
# SPDX-FileCopyrightText: 2025 Anaconda, Inc
# SPDX-License-Identifier: Apache-2.0

# cli.py
"""
FedLesion - Command Line Module

    fedlesion generate  --output-dir data/
    fedlesion run       --rule fedprox --rounds 10 --output-dir runs/
    fedlesion run-suite --output-dir suite/
    fedlesion evaluate  --dataset data/ --predictions preds/ --output metrics.csv
    fedlesion rank      runs/a/per_patient.csv runs/b/per_patient.csv
    fedlesion report    --input suite/

Exit status: 0 on success, 1 for usage errors, 2 when the run fails (the
diagnostic is logged).
"""

import argparse, logging, sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .__version__ import __SDK_VERSION__
from .common import FedLesionError
from .config import Configuration, PRESETS
from .evaluation import EvaluationConfig
from .formatting import RULE_NAMES, log_level
from .orchestrator import run_centralized, run_federated, run_suite
from .rasters import read_federation, write_federation
from .reports import (
    HETEROGENEITY_CSV, RANKING_CSV, RANKING_TXT, evaluate_predictions, format_ranking,
    heterogeneity_frame, rank_files, ranking_frame, summarize_directory, write_csv,
    write_predictions, write_report, write_suite,
)
from .signals import get_telemetry_logger_handler, initialize_telemetry, shutdown_telemetry
from .synthdata import dataset_digest, generate_federation

logger = logging.getLogger(__package__)

DEFAULT_OUTPUT_DIR = 'fedlesion-output'


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; status 2 is reserved for failed runs
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _experiment_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='YAML experiment file')
    parser.add_argument('--seed', type=int, help='master seed')
    parser.add_argument('--rule', choices=RULE_NAMES, help='aggregation rule')
    parser.add_argument('--rounds', type=int, help='number of federated rounds')
    parser.add_argument('--eval-every', type=int, help='evaluate every N rounds')
    parser.add_argument('--preset', choices=sorted(PRESETS), help='training schedule preset')
    parser.add_argument('--workers', type=int, help='threads for local training and evaluation')
    parser.add_argument('--output-dir', help=f'output directory (default: {DEFAULT_OUTPUT_DIR})')


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog='fedlesion',
        description='Deterministic simulator of multi-center federated lesion segmentation.',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__SDK_VERSION__}')
    parser.add_argument('--verbose', '-v', action='store_true', help='log at info level')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=_ArgumentParser)
    commands.required = True

    generate = commands.add_parser('generate', help='write the synthetic federation as rasters and a manifest')
    _experiment_flags(generate)

    run = commands.add_parser('run', help='train one federated (or centralized) model')
    _experiment_flags(run)
    run.add_argument('--centralized', action='store_true', help='train the pooled centralized baseline')
    run.add_argument('--dataset', help='directory written by `generate` instead of generating in memory')
    run.add_argument('--save-predictions', action='store_true', help='write predicted masks of the final model')

    suite = commands.add_parser('run-suite', help='train all five rules and the centralized baseline and rank them')
    _experiment_flags(suite)
    suite.add_argument('--dataset', help='directory written by `generate` instead of generating in memory')

    evaluate = commands.add_parser('evaluate', help='score prediction rasters against a generated dataset')
    evaluate.add_argument('--dataset', required=True, help='directory written by `generate`')
    evaluate.add_argument('--predictions', required=True, help='directory of <patient_id>_pred.raw files')
    evaluate.add_argument('--output', help='CSV path (default: <predictions>/evaluation.csv)')
    evaluate.add_argument('--connectivity', type=int, choices=(4, 8), default=8, help='lesion connectivity')

    rank = commands.add_parser('rank', help='rank models from per-patient metric CSVs')
    rank.add_argument('files', nargs='+', help='per_patient.csv or `evaluate` outputs')
    rank.add_argument('--output-dir', help='also write ranking.csv and ranking.txt here')

    report = commands.add_parser('report', help='rebuild summary tables of a run or suite directory')
    report.add_argument('--input', required=True, help='directory holding per_patient.csv')
    return parser


def _configuration(args: argparse.Namespace) -> Configuration:
    config = Configuration(config_file=args.config)
    if args.seed is not None:
        config.set_master_seed(args.seed)
    if args.rule is not None:
        config.set_rule(args.rule)
    if args.rounds is not None:
        config.set_rounds(args.rounds)
    if args.eval_every is not None:
        config.set_eval_every(args.eval_every)
    if args.preset is not None:
        config.set_preset(args.preset)
    if args.workers is not None:
        config.set_workers(args.workers)
    config.set_output_dir(args.output_dir or config._get_output_dir() or DEFAULT_OUTPUT_DIR)
    return config


def _configure_logging(level: str, verbose: bool):
    numeric = logging.INFO if verbose else log_level(level)
    logging.basicConfig(level=numeric, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logging.getLogger(__package__).setLevel(numeric)


def _start_telemetry(config: Configuration):
    if initialize_telemetry(config):
        handler = get_telemetry_logger_handler()
        if handler is not None:
            logging.getLogger(__package__).addHandler(handler)


def _federation(config: Configuration, dataset: Optional[str]):
    fed = config.build()
    if dataset is None:
        return fed, generate_federation(fed.centers, workers=fed.workers)
    datasets = read_federation(dataset)
    return replace(fed, centers=[ds.profile for ds in datasets]), datasets


def _cmd_generate(args: argparse.Namespace, config: Configuration) -> int:
    fed = config.build()
    out = Path(config._get_output_dir())
    datasets = generate_federation(fed.centers, workers=fed.workers)
    digest = dataset_digest(datasets)
    write_federation(datasets, out, extra={'master_seed': fed.master_seed, 'dataset_digest': digest})
    write_csv(heterogeneity_frame(datasets), out / HETEROGENEITY_CSV)
    n_studies = sum(len(ds.all_studies()) for ds in datasets)
    print(f"Generated {n_studies} studies in {len(datasets)} centers -> {out} (digest {digest[:12]})")
    return 0


def _print_run(report):
    final = report.final_round.pools
    print(f"{report.model_name}: PRE large={final['large']['pre']:.4f} limited={final['limited']['pre']:.4f} "
          f"DSC large={final['large']['dsc']:.4f} limited={final['limited']['dsc']:.4f} "
          f"digest={report.digest()[:12]}")


def _cmd_run(args: argparse.Namespace, config: Configuration) -> int:
    fed, datasets = _federation(config, args.dataset)
    report = run_centralized(fed, datasets) if args.centralized else run_federated(fed, datasets)
    out = Path(config._get_output_dir()) / report.model_name
    write_report(report, out)
    if args.save_predictions:
        write_predictions(report.final_params, datasets, fed.model, out / 'predictions')
    _print_run(report)
    return 0


def _cmd_run_suite(args: argparse.Namespace, config: Configuration) -> int:
    fed, datasets = _federation(config, args.dataset)
    suite = run_suite(fed, datasets)
    write_suite(suite, Path(config._get_output_dir()))
    for report in suite.reports.values():
        _print_run(report)
    print(format_ranking(suite.rankings), end='')
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    frame = evaluate_predictions(args.dataset, args.predictions, EvaluationConfig(connectivity=args.connectivity))
    output = Path(args.output) if args.output else Path(args.predictions) / 'evaluation.csv'
    write_csv(frame, output)
    print(f"Evaluated {len(frame)} patients -> {output}")
    return 0


def _cmd_rank(args: argparse.Namespace) -> int:
    rankings = rank_files(args.files)
    text = format_ranking(rankings)
    if args.output_dir:
        out = Path(args.output_dir)
        write_csv(ranking_frame(rankings), out / RANKING_CSV)
        (out / RANKING_TXT).write_text(text, encoding='utf-8')
    print(text, end='')
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    print(summarize_directory(args.input), end='')
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(str(e), file=sys.stderr)
        return 1

    config: Optional[Configuration] = None
    try:
        if args.command in ('generate', 'run', 'run-suite'):
            config = _configuration(args)
            _configure_logging(config._get_logging_level(), args.verbose)
            _start_telemetry(config)
        else:
            _configure_logging('warning', args.verbose)

        if args.command == 'generate':
            return _cmd_generate(args, config)
        if args.command == 'run':
            return _cmd_run(args, config)
        if args.command == 'run-suite':
            return _cmd_run_suite(args, config)
        if args.command == 'evaluate':
            return _cmd_evaluate(args)
        if args.command == 'rank':
            return _cmd_rank(args)
        return _cmd_report(args)
    except (FedLesionError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
    finally:
        if config is not None:
            shutdown_telemetry()


if __name__ == '__main__':
    sys.exit(main())
