"""Experiment orchestration: seeded runs to CSV/manifest/checkpoints, reports.

`run_experiment` executes every seed of a config (optionally in parallel
worker processes), appends one results row per (run, epoch) and writes a JSON
manifest plus one parameter checkpoint per run. Outputs are byte-identical
across re-runs with the same config and seeds, except the manifest's wall
time. `write_report` consumes only the results CSV, so it also works on
archived results.
"""

from __future__ import annotations

import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .backend import BACKEND
from .config import (
    ExperimentConfig,
    build_method,
    build_optim,
    build_pair,
    build_plan,
    serialize_config,
)
from .errors import DegenerateSampleError, ValidationError
from .evaluate import (
    COMPARISON_FIELDS,
    RESULTS_FIELDS,
    aggregate,
    method_mean,
    read_results_csv,
    significant,
    wilcoxon_signed_rank,
    write_csv,
)
from .methods import config_fingerprint, train
from .nn import save_checkpoint


def results_root() -> Path:
    """Root for relative output directories; override with UDALAB_RESULTS."""
    return Path(os.environ.get("UDALAB_RESULTS", "."))


def resolve_out_dir(cfg: ExperimentConfig, out_override=None) -> Path:
    out = Path(out_override) if out_override else Path(cfg.run["out"])
    return out if out.is_absolute() else results_root() / out


def _run_one_seed(cfg: ExperimentConfig, seed: int):
    pair = build_pair(cfg.dataset)
    name, method_cfg, arch = build_method(cfg)
    plan = build_plan(cfg, pair)
    optim = build_optim(cfg)
    pipeline = cfg.dataset.get("augment") or None
    params: dict = {}
    result = train(name, pair, method_cfg, optim, plan, seed, arch=arch,
                   augment_pipeline=pipeline, param_store=params)
    return result, params


def experiment_hash(cfg: ExperimentConfig) -> str:
    return config_fingerprint(**cfg.sections())


def run_experiment(cfg: ExperimentConfig, out_dir, parallel: int = 1) -> Path:
    """Execute every seed, write results.csv/manifest.json/checkpoints.

    Returns the results CSV path.
    """
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)
    seeds = list(cfg.run["seeds"])
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_run_one_seed, cfg, seed) for seed in seeds]
            outcomes = [f.result() for f in futures]   # collected in seed order
    else:
        outcomes = [_run_one_seed(cfg, seed) for seed in seeds]

    rows = []
    for run_index, (seed, (result, params)) in enumerate(zip(seeds, outcomes)):
        for epoch, acc in enumerate(result.epoch_accuracy):
            rows.append({
                "method": result.method, "task": result.task, "seed": seed,
                "run_index": run_index, "epoch": epoch, "split": "target",
                "accuracy": acc,
            })
        save_checkpoint(out_dir / "checkpoints" / f"run{run_index:02d}-seed{seed}.json",
                        params.items())
    results_path = out_dir / "results.csv"
    write_csv(results_path, RESULTS_FIELDS, rows)
    manifest = {
        "config_hash": experiment_hash(cfg),
        "config": cfg.sections(),
        "config_text": serialize_config(cfg),
        "seeds": seeds,
        "backend": BACKEND,
        "versions": {
            "udalab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "wall_time_s": round(time.time() - started, 3),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
    return results_path


def _json_default(obj):
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


# -------------------------------------------------------------------- report

def _final_accuracies(rows) -> dict:
    """(method, task) -> {run_index: accuracy at the run's last epoch}."""
    last_epoch: dict = {}
    finals: dict = {}
    for row in rows:
        if row["split"] != "target":
            continue
        key = (row["method"], row["task"], row["run_index"])
        if key not in last_epoch or row["epoch"] > last_epoch[key]:
            last_epoch[key] = row["epoch"]
            finals[key] = row["accuracy"]
    grouped: dict = {}
    for (method, task, run_index), acc in finals.items():
        grouped.setdefault((method, task), {})[run_index] = acc
    return grouped


def _sanitize(name: str) -> str:
    return "".join(ch if ch.isalnum() else "-" for ch in name).strip("-")


def write_report(results_dir, comparisons=(), alternative: str = "greater",
                 out_dir=None, min_runs: int = 5) -> dict:
    """Emit per-task accuracy tables, a per-method mean summary and the
    pairwise signed-rank comparison CSV.

    Comparisons with fewer than ``min_runs`` aligned run pairs produce a
    warning row (empty statistics) instead of failing.
    """
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir else results_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_results_csv(results_dir / "results.csv")
    grouped = _final_accuracies(rows)
    methods: list[str] = []
    tasks: list[str] = []
    for method, task in grouped:
        if method not in methods:
            methods.append(method)
        if task not in tasks:
            tasks.append(task)

    written = {"tables": [], "comparisons": None, "method_mean": None}

    averages: dict = {}
    for task in tasks:
        max_runs = max(len(grouped[(m, task)]) for m in methods if (m, task) in grouped)
        fields = ["method", *[f"run_{i}" for i in range(max_runs)], "average", "best_per_task"]
        table_rows = []
        best = None
        for method in methods:
            runs = grouped.get((method, task))
            if not runs:
                continue
            ordered = [runs[i] for i in sorted(runs)]
            avg = aggregate(ordered)
            averages[(method, task)] = avg
            best = avg if best is None else max(best, avg)
            row = {"method": method, "average": avg, "best_per_task": False}
            for i in range(max_runs):
                row[f"run_{i}"] = ordered[i] if i < len(ordered) else None
            table_rows.append(row)
        for row in table_rows:
            row["best_per_task"] = row["average"] == best
        path = out_dir / f"table_{_sanitize(task)}.csv"
        write_csv(path, fields, table_rows)
        written["tables"].append(path)

    mean_rows = []
    for method in methods:
        per_task = [averages[(method, t)] for t in tasks if (method, t) in averages]
        if per_task:
            mean_rows.append({
                "method": method, "n_tasks": len(per_task), "mean_accuracy": method_mean(per_task),
            })
    mean_path = out_dir / "method_mean.csv"
    write_csv(mean_path, ("method", "n_tasks", "mean_accuracy"), mean_rows)
    written["method_mean"] = mean_path

    comparison_rows = []
    for method_a, method_b in comparisons:
        for task in tasks:
            runs_a = grouped.get((method_a, task), {})
            runs_b = grouped.get((method_b, task), {})
            shared = sorted(set(runs_a) & set(runs_b))
            base = {"method_a": method_a, "method_b": method_b, "task": task, "n": len(shared)}
            if len(shared) < min_runs:
                print(f"warning: {method_a} vs {method_b} on {task}: only {len(shared)} "
                      f"aligned runs (< {min_runs}); skipping the test", file=sys.stderr)
                comparison_rows.append({**base, "t_minus": None, "z": None, "p_exact": None,
                                        "p_approx": None, "significant_at_0.025": False})
                continue
            xs = [runs_a[i] for i in shared]
            ys = [runs_b[i] for i in shared]
            try:
                result = wilcoxon_signed_rank(xs, ys, alternative)
            except (DegenerateSampleError, ValidationError) as exc:
                # e.g. ties dropped the pair count below the test's minimum
                print(f"warning: {method_a} vs {method_b} on {task}: {exc}", file=sys.stderr)
                comparison_rows.append({**base, "t_minus": None, "z": None, "p_exact": None,
                                        "p_approx": None, "significant_at_0.025": False})
                continue
            comparison_rows.append({
                **base, "n": result.n, "t_minus": result.t_minus, "z": result.z,
                "p_exact": result.p_exact, "p_approx": result.p_approx,
                "significant_at_0.025": significant(result),
            })
    cmp_path = out_dir / "comparisons.csv"
    write_csv(cmp_path, COMPARISON_FIELDS, comparison_rows)
    written["comparisons"] = cmp_path
    return written


def parse_compare(specs) -> list[tuple[str, str]]:
    out = []
    for spec in specs or ():
        if ":" not in spec:
            raise ValidationError(f"comparison {spec!r} must look like method_a:method_b")
        a, b = spec.split(":", 1)
        out.append((a.strip(), b.strip()))
    return out
