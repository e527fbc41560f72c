"""
Command line front end.

    covthresh estimate --input data.csv --method threshold --s 0.3 --out-dir out
    covthresh select --input data.csv --seed 7 --out-dir out
    covthresh simulate --config table1.json --seed 7 --out-dir out

Exit codes: 0 on success, 2 for bad usage or input, 3 for numeric failure. Every run writes
manifest.json (command, config, seed, package versions, timestamp) to the output directory.
"""
import argparse
import json
import logging
import os
import platform
import sys
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional

import numpy as np
import openpyxl
import pandas as pd

import covthresh
from covthresh.datagen import build_covariance, sample, specs_from_config
from covthresh.errors import InputError, NumericalFailure
from covthresh.estimators import (ThresholdSpec, band, ledoit_wolf, pairwise_covariance,
                                  pd_margin_check, sample_covariance, threshold)
from covthresh.experiments import (CvOracleConfig, EofConfig, RateConfig, ScreeConfig,
                                   Table1Config, cv_vs_oracle, eof_pipeline, rate_study,
                                   run_table1, scree)
from covthresh.matcore import DEFAULT_SOLVER, SOLVERS, min_eigenvalue
from covthresh.readers import read_obs_csv
from covthresh.selection import (GRID_KINDS, THRESHOLD, auto_grid, default_scheme,
                                 make_grid, regularize, select)
from covthresh.sparsity import profile

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

METHODS = ('sample', 'pairwise', 'threshold', 'band', 'ledoit_wolf')
FORMATS = ('csv', 'json', 'xlsx')
LOG_FORMAT = '%(levelname)s:%(name)s:%(message)s'


def _versions() -> Dict[str, str]:
    return {'covthresh': covthresh.__version__, 'numpy': np.__version__,
            'pandas': pd.__version__, 'openpyxl': openpyxl.__version__,
            'python': platform.python_version()}


def _out_path(args, name: str) -> str:
    return os.path.join(args.out_dir, name)


def _write_text(path: str, text: str) -> None:
    with open(path, 'w', newline='\n') as f:
        f.write(text)
        if not text.endswith('\n'):
            f.write('\n')
    logger.info("Wrote %s", path)


def _write_csv(path: str, writer: Callable) -> None:
    with open(path, 'w', newline='') as f:
        writer(f)
    logger.info("Wrote %s", path)


def _write_table(args, stem: str, table) -> None:
    """
    Result table in the format chosen by --format.
    """
    if args.format == 'csv':
        _write_csv(_out_path(args, f'{stem}.csv'), table.to_csv)
    elif args.format == 'json':
        _write_text(_out_path(args, f'{stem}.json'), table.to_json())
    elif hasattr(table, 'to_excel'):
        path = _out_path(args, f'{stem}.xlsx')
        table.to_excel(path)
        logger.info("Wrote %s", path)
    else:
        raise InputError(f"Format 'xlsx' is not available for {stem} output; use csv or json.")


def _write_manifest(args, config: Optional[dict], seed: Optional[int]) -> None:
    manifest = {'command': args.command,
                'config': config,
                'seed': seed,
                'versions': _versions(),
                'timestamp': datetime.now(timezone.utc).isoformat()}
    _write_text(_out_path(args, 'manifest.json'), json.dumps(manifest, indent=2))


def _load_config(args) -> dict:
    """
    JSON config from --config, with --seed and --threads taking precedence over its entries.
    """
    if args.config is None:
        raise InputError(f"Command '{args.command}' needs --config.")
    with open(args.config) as f:
        config = json.load(f)
    if not isinstance(config, dict):
        raise InputError(f"Config file '{args.config}' must hold a JSON object.")
    if args.seed is not None:
        config['seed'] = args.seed
    if config.get('seed') is None:
        raise InputError(f"Command '{args.command}' is stochastic and needs a seed, from --seed "
                         f"or the config's 'seed' entry.")
    if getattr(args, 'threads', None) is not None:
        config['threads'] = args.threads
    return config


def _require_input(args) -> str:
    if args.input is None:
        raise InputError(f"Command '{args.command}' needs --input.")
    return args.input


def cmd_estimate(args) -> None:
    x = read_obs_csv(_require_input(args))
    pairwise = args.method == 'pairwise' or args.covariance == 'pairwise'
    base = pairwise_covariance(x) if pairwise else sample_covariance(x)
    report = {'method': args.method, 'n': x.n, 'p': x.p}
    if args.method in ('sample', 'pairwise'):
        estimate = base
    elif args.method == 'threshold':
        if args.s is None:
            raise InputError("Method 'threshold' needs --s.")
        estimate = threshold(base, ThresholdSpec(args.s, keep_diagonal=args.keep_diagonal))
        report['s'] = args.s
        report['pd_margin_check'] = pd_margin_check(base, estimate, args.solver)
    elif args.method == 'band':
        if args.k is None:
            raise InputError("Method 'band' needs --k.")
        estimate = band(base, args.k)
        report['k'] = args.k
    else:
        estimate = ledoit_wolf(x)
    report['min_eigenvalue'] = min_eigenvalue(estimate, args.solver)
    prof = profile(estimate, args.q, args.solver)
    report['sparsity_profile'] = {'q': prof.q, 'c0_hat': prof.c0_hat, 'm_hat': prof.m_hat,
                                  'min_eig': prof.min_eig,
                                  'lambda_max_bound': prof.lambda_max_bound}
    _write_csv(_out_path(args, 'estimate.csv'), estimate.to_csv)
    _write_text(_out_path(args, 'report.json'), json.dumps(report, indent=2))
    _write_manifest(args, {'input': args.input, **report}, None)


def cmd_select(args) -> None:
    if args.seed is None:
        raise InputError("Command 'select' is stochastic and needs --seed.")
    x = read_obs_csv(_require_input(args))
    covariance = 'pairwise' if x.has_missing else args.covariance
    base = pairwise_covariance(x) if covariance == 'pairwise' else sample_covariance(x)
    if args.j_max is not None:
        grid = make_grid(x.p, x.n, args.j_max, args.kind, args.subdivisions)
    else:
        grid = auto_grid(base, x.n, args.kind, args.subdivisions)
    scheme = default_scheme(x.n, args.n_splits, args.seed)
    result = select(x, grid, scheme, covariance=covariance, min_threshold=args.min_threshold,
                    threads=args.threads or 1)
    estimate = regularize(base, result.chosen, 'threshold' if args.kind == THRESHOLD else 'band')
    _write_text(_out_path(args, 'selection.json'), result.to_json())
    _write_csv(_out_path(args, 'estimate.csv'), estimate.to_csv)
    _write_manifest(args, {'input': args.input, 'kind': args.kind, 'n_splits': args.n_splits,
                           'j_max': args.j_max, 'subdivisions': args.subdivisions,
                           'covariance': covariance, 'min_threshold': args.min_threshold},
                    args.seed)


def cmd_simulate(args) -> None:
    config = Table1Config.from_dict(_load_config(args))
    _write_table(args, 'summary', run_table1(config))
    _write_manifest(args, config.to_dict(), config.seed)


def cmd_scree(args) -> None:
    config = ScreeConfig.from_dict(_load_config(args))
    _write_table(args, 'scree', scree(config))
    _write_manifest(args, config.to_dict(), config.seed)


def cmd_rate(args) -> None:
    config = RateConfig.from_dict(_load_config(args))
    result = rate_study(config)
    _write_csv(_out_path(args, 'rate_points.csv'), result.to_csv)
    _write_text(_out_path(args, 'rate.json'), result.to_json())
    _write_manifest(args, config.to_dict(), config.seed)


def cmd_cvoracle(args) -> None:
    config = CvOracleConfig.from_dict(_load_config(args))
    result = cv_vs_oracle(config)
    _write_csv(_out_path(args, 'cvoracle.csv'), result.to_csv)
    _write_text(_out_path(args, 'cvoracle.json'), result.to_json())
    _write_manifest(args, config.to_dict(), config.seed)


def cmd_eof(args) -> None:
    config = EofConfig.from_dict(_load_config(args))
    result = eof_pipeline(config)
    _write_text(_out_path(args, 'eof.json'), result.to_json())
    for name, eofs in (('thresholded', result.thresholded), ('baseline', result.baseline)):
        for path in eofs.write_rasters(args.out_dir, f'eof_{name}'):
            logger.info("Wrote %s", path)
    _write_manifest(args, config.to_dict(), config.seed)


def cmd_generate(args) -> None:
    config = _load_config(args)
    config.pop('threads', None)
    model, sample_spec = specs_from_config(config)
    x = sample(build_covariance(model), sample_spec, threads=args.threads or 1)
    _write_csv(_out_path(args, 'data.csv'), x.to_csv)
    _write_manifest(args, config, sample_spec.seed)


COMMANDS = {'estimate': cmd_estimate,
            'select': cmd_select,
            'simulate': cmd_simulate,
            'scree': cmd_scree,
            'rate': cmd_rate,
            'cvoracle': cmd_cvoracle,
            'eof': cmd_eof,
            'generate': cmd_generate}


def _seed(text: str) -> int:
    try:
        seed = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got '{text}'")
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {seed} is outside the unsigned 64-bit range")
    return seed


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--input', help="Observation CSV, one row per observation.")
    common.add_argument('--config', help="JSON config of the command.")
    common.add_argument('--out-dir', default='.', help="Directory for all output files.")
    common.add_argument('--format', choices=FORMATS, default='csv',
                        help="Format of result tables.")
    common.add_argument('--seed', type=_seed, help="Unsigned 64-bit seed.")
    common.add_argument('--threads', type=int, help="Worker threads (default 1).")
    common.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    parser = argparse.ArgumentParser(prog='covthresh',
                                     description="Regularized covariance estimation by "
                                                 "thresholding, with simulation studies.")
    parser.add_argument('--version', action='version', version=covthresh.__version__)
    sub = parser.add_subparsers(dest='command', required=True)

    est = sub.add_parser('estimate', parents=[common], help="Estimate a covariance matrix.")
    est.add_argument('--method', choices=METHODS, default='sample')
    est.add_argument('--s', type=float, help="Threshold for method 'threshold'.")
    est.add_argument('--k', type=int, help="Band width for method 'band'.")
    est.add_argument('--keep-diagonal', action='store_true',
                     help="Never threshold the diagonal.")
    est.add_argument('--q', type=float, default=0.0, help="q of the reported sparsity profile.")
    est.add_argument('--solver', choices=SOLVERS, default=DEFAULT_SOLVER)
    est.add_argument('--covariance', choices=['sample', 'pairwise'], default='sample',
                     help="Base covariance of threshold and band.")

    sel = sub.add_parser('select', parents=[common],
                         help="Choose a threshold or band width by cross-validation.")
    sel.add_argument('--kind', choices=GRID_KINDS, default=THRESHOLD)
    sel.add_argument('--n-splits', type=int, default=10)
    sel.add_argument('--j-max', type=int, help="Upper end of the grid; derived from the data "
                                               "when omitted.")
    sel.add_argument('--subdivisions', type=int, default=1)
    sel.add_argument('--covariance', choices=['sample', 'pairwise'], default='sample')
    sel.add_argument('--min-threshold', type=float)

    for name, text in (('simulate', "Loss table of five estimators on AR(1) data."),
                       ('scree', "Eigenvalue spectra of the estimators."),
                       ('rate', "Empirical convergence rate of thresholding."),
                       ('cvoracle', "Cross-validated versus oracle threshold."),
                       ('eof', "EOFs of a synthetic gridded field."),
                       ('generate', "Draw a synthetic data set.")):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    if args.threads is not None and args.threads < 1:
        parser.error(f"--threads must be positive, got {args.threads}")
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        COMMANDS[args.command](args)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
