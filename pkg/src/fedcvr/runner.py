"""Experiment matrix execution and CSV persistence.

Every (config, seed) cell is independent and owns its trace file; cells
may run in parallel (capped by FEDCVR_THREADS) because all randomness
comes from per-cell named streams. The summary is a single-threaded merge
pass, so output bytes never depend on scheduling.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .runtime import ExperimentResult, run_experiment

TRACE_HEADER = "round,policy,seed,global_test_loss,global_test_acc,update_norm,selected_ids,coalition_sizes"
SUMMARY_HEADER = "setting,policy,seeds,final_loss_mean,final_loss_std,final_acc_mean,final_acc_std,failed_seeds"


def fmt(x) -> str:
    """17 significant digits: parses back to the identical double."""
    if x is None:
        return "nan"
    return f"{float(x):.17g}"


def trace_rows(result: ExperimentResult, policy: str, seed: int):
    rows = []
    for m in result.rounds:
        rows.append(
            ",".join(
                [
                    str(m.round),
                    policy,
                    str(seed),
                    fmt(m.global_test_loss),
                    fmt(m.global_test_acc),
                    fmt(m.update_norm),
                    ";".join(str(i) for i in m.selected),
                    ";".join(str(s) for s in m.coalition_sizes),
                ]
            )
        )
    return rows


def write_trace(path, result: ExperimentResult, policy: str, seed: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for row in trace_rows(result, policy, seed):
            fh.write(row + "\n")


def cell_threads(n_cells: int) -> int:
    raw = os.environ.get("FEDCVR_THREADS", "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        cap = 1
    return max(1, min(cap, n_cells))


@dataclass
class CellOutcome:
    setting: str
    policy: str
    seed: int
    final_loss: float | None
    final_acc: float | None
    error: str | None


def _run_cell(args) -> CellOutcome:
    setting, policy, cfg, seed, out_dir = args
    try:
        result = run_experiment(cfg, seed)
        write_trace(_trace_path(out_dir, setting, policy, seed), result, policy, seed)
        return CellOutcome(setting, policy, seed, result.final_loss_mean, result.final_acc_mean, None)
    except Exception as exc:  # cell isolation: one failure must not sink the matrix
        return CellOutcome(setting, policy, seed, None, None, f"{type(exc).__name__}: {exc}")


def _trace_path(out_dir, setting, policy, seed) -> str:
    return os.path.join(out_dir, f"{setting}__{policy}__seed{seed}.csv")


def _clean(text: str) -> str:
    return text.replace(",", " ").replace("\n", " ")


def run_matrix(cells, out_dir) -> list:
    """Run every (setting, policy, config) x seed cell and write summary.csv.

    Returns the summary rows (also written to disk), ordered by
    (setting, policy).
    """
    os.makedirs(out_dir, exist_ok=True)
    jobs = [
        (setting, policy, cfg, seed, out_dir)
        for setting, policy, cfg in cells
        for seed in cfg.seeds
    ]
    threads = cell_threads(len(jobs))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(job) for job in jobs]

    grouped: dict = {}
    for oc in outcomes:
        grouped.setdefault((oc.setting, oc.policy), []).append(oc)

    rows = []
    for (setting, policy) in sorted(grouped):
        group = sorted(grouped[(setting, policy)], key=lambda oc: oc.seed)
        ok = [oc for oc in group if oc.error is None]
        failed = [oc for oc in group if oc.error is not None]
        losses = np.array([oc.final_loss for oc in ok], dtype=float)
        accs = [oc.final_acc for oc in ok if oc.final_acc is not None]
        rows.append(
            ",".join(
                [
                    setting,
                    policy,
                    ";".join(str(oc.seed) for oc in group),
                    fmt(losses.mean()) if ok else "nan",
                    fmt(losses.std()) if ok else "nan",
                    fmt(float(np.mean(accs))) if accs else "nan",
                    fmt(float(np.std(accs))) if accs else "nan",
                    ";".join(f"{oc.seed}:{_clean(oc.error)}" for oc in failed),
                ]
            )
        )

    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    return rows
