"""Command-line interface.

Subcommands: run (one experiment cell), matrix (settings x policies),
gen-data (dump a task's datasets to the columnar text format), verify
(built-in oracle checks). Exit codes: 0 success, 1 config error,
2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import verify as verify_mod
from .config import load_experiment_config, load_matrix_config
from .errors import ConfigError, SimulationError
from .runner import fmt, run_matrix, write_trace
from .runtime import run_experiment
from .tasks import generate_synthetic_classification, generate_synthetic_regression, save_datasets
from .tasks import SyntheticRegressionConfig


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    result = run_experiment(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{cfg.label}__{cfg.policy.variant}__seed{seed}.csv")
    write_trace(path, result, cfg.policy.variant, seed)
    line = f"{cfg.label} policy={cfg.policy.variant} seed={seed} final_loss={fmt(result.final_loss_mean)}"
    if result.final_acc_mean is not None:
        line += f" final_acc={fmt(result.final_acc_mean)}"
    print(line)
    print(f"trace written to {path}")
    return 0


def _cmd_matrix(args) -> int:
    cells = load_matrix_config(args.config)
    rows = run_matrix(cells, args.out)
    for row in rows:
        print(row)
    print(f"summary written to {args.out}/summary.csv")
    return 0


def _cmd_gen_data(args) -> int:
    cfg = load_experiment_config(args.config)
    task_cfg = cfg.task
    if args.seed is not None:
        task_cfg = dataclasses.replace(task_cfg, seed=args.seed)
    if isinstance(task_cfg, SyntheticRegressionConfig):
        datasets, _ = generate_synthetic_regression(task_cfg)
    else:
        datasets, _ = generate_synthetic_classification(task_cfg)
    save_datasets(args.out, datasets)
    print(f"{len(datasets)} client datasets written to {args.out}")
    return 0


def _cmd_verify(_args) -> int:
    return 0 if verify_mod.run_all() else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcvr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment cell")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=".")
    p_run.set_defaults(func=_cmd_run)

    p_matrix = sub.add_parser("matrix", help="run a settings x policies matrix")
    p_matrix.add_argument("--config", required=True)
    p_matrix.add_argument("--out", required=True)
    p_matrix.set_defaults(func=_cmd_matrix)

    p_gen = sub.add_parser("gen-data", help="write a task's datasets to a text file")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=_cmd_gen_data)

    p_verify = sub.add_parser("verify", help="run built-in oracle checks")
    p_verify.set_defaults(func=_cmd_verify)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, OSError, ValueError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
