"""Accuracy scoring, two-decimal table aggregation, Wilcoxon signed-rank test.

The Wilcoxon implementation reports both an exact one-sided p value (full
enumeration of the 2^n sign assignments, feasible up to n = 20) and the
normal-approximation tail without continuity correction; published summaries
in this area quote the latter's z statistic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DegenerateSampleError, ValidationError

EXACT_ENUMERATION_LIMIT = 20

#: per-epoch results schema written by `run` and consumed by `report`
RESULTS_FIELDS = ("method", "task", "seed", "run_index", "epoch", "split", "accuracy")
#: pairwise comparison schema written by `report`
COMPARISON_FIELDS = (
    "method_a", "method_b", "task", "n", "t_minus", "z",
    "p_exact", "p_approx", "significant_at_0.025",
)


def accuracy(predictions, labels) -> float:
    """Percent of matching entries."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels must have equal length")
    if predictions.size == 0:
        raise ValidationError("accuracy of an empty sample is undefined")
    return float(100.0 * (predictions == labels).mean())


def round2(value: float) -> float:
    """Round half-up to two decimals (table convention)."""
    return float(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _decimal_mean(values) -> float:
    # decimal arithmetic over the shortest-repr digits so printed two-decimal
    # inputs average exactly (a float mean can land a hair under a .xx5 tie)
    values = list(values)
    if not values:
        raise ValidationError("cannot average an empty list")
    total = sum(Decimal(repr(float(v))) for v in values)
    mean = total / Decimal(len(values))
    return float(mean.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def aggregate(rows) -> float:
    """Arithmetic mean of per-run accuracies at two-decimal half-up rounding."""
    return _decimal_mean(rows)


def method_mean(task_averages) -> float:
    """Mean of a method's per-task averages at two decimals."""
    return _decimal_mean(task_averages)


@dataclass(frozen=True)
class AccuracyTable:
    method: str
    task: str
    runs: tuple[float, ...]
    average: float

    @classmethod
    def of(cls, method: str, task: str, runs) -> "AccuracyTable":
        runs = tuple(float(r) for r in runs)
        return cls(method, task, runs, aggregate(runs))


# ------------------------------------------------------------------ Wilcoxon

@dataclass(frozen=True)
class WilcoxonResult:
    n: int                    # pairs left after dropping zero differences
    t_plus: float             # positive-rank sum
    t_minus: float            # negative-rank sum
    z: float                  # (T+ - mu) / sigma, no continuity correction
    p_exact: float | None     # one-sided, sign enumeration (n <= 20)
    p_approx: float           # one-sided normal tail


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def exact_sign_tail(ranks, t_obs: float, direction: str) -> float:
    """P(T+ >= t_obs) ("greater") or P(T+ <= t_obs) ("less") under random signs.

    Enumerates all 2^n assignments of the given ranks; the workhorse behind
    ``p_exact`` and directly comparable against a brute-force oracle.
    """
    ranks = np.asarray(ranks, dtype=np.float64)
    n = ranks.size
    if n > EXACT_ENUMERATION_LIMIT:
        raise ValidationError(f"exact enumeration is limited to n <= {EXACT_ENUMERATION_LIMIT}")
    codes = np.arange(1 << n, dtype=np.uint64)
    t_sums = np.zeros(1 << n, dtype=np.float64)
    for k in range(n):
        picked = (codes >> np.uint64(k)) & np.uint64(1)
        t_sums += picked * ranks[k]
    if direction == "greater":
        count = int((t_sums >= t_obs).sum())
    elif direction == "less":
        count = int((t_sums <= t_obs).sum())
    else:
        raise ValidationError("direction must be 'greater' or 'less'")
    return count / float(1 << n)


def wilcoxon_signed_rank(xs, ys, alternative: str = "greater") -> WilcoxonResult:
    """Paired one-sided signed-rank test of xs against ys.

    ``alternative="greater"`` asks whether xs tends to exceed ys. Zero
    differences are dropped before ranking; ties in |difference| share
    average ranks. Requires at least 5 nonzero differences.
    """
    if alternative not in ("greater", "less"):
        raise ValidationError("alternative must be 'greater' or 'less'")
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValidationError("xs and ys must be equally long 1-d samples")
    diffs = xs - ys
    diffs = diffs[diffs != 0.0]
    if diffs.size == 0:
        raise DegenerateSampleError("all paired differences are zero")
    if diffs.size < 5:
        raise ValidationError("need at least 5 nonzero differences")
    n = diffs.size
    ranks = _average_ranks(np.abs(diffs))
    t_plus = float(ranks[diffs > 0].sum())
    t_minus = float(ranks[diffs < 0].sum())
    mu = n * (n + 1) / 4.0
    sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
    z = (t_plus - mu) / sigma
    p_approx = _normal_sf(z) if alternative == "greater" else 1.0 - _normal_sf(z)
    p_exact = None
    if n <= EXACT_ENUMERATION_LIMIT:
        p_exact = exact_sign_tail(ranks, t_plus, alternative)
    return WilcoxonResult(n, t_plus, t_minus, z, p_exact, p_approx)


def significant(result: WilcoxonResult, level: float = 0.025) -> bool:
    """Significance at the given one-sided level, preferring the exact p."""
    p = result.p_exact if result.p_exact is not None else result.p_approx
    return p <= level


# ----------------------------------------------------------------- CSV forms

def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, fields, rows) -> None:
    """Deterministic CSV: fixed header, repr-formatted floats, LF newlines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_format_value(row[f]) for f in fields])


def read_results_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULTS_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"results CSV is missing columns {sorted(missing)}")
        rows = []
        for raw in reader:
            rows.append({
                "method": raw["method"],
                "task": raw["task"],
                "seed": int(raw["seed"]),
                "run_index": int(raw["run_index"]),
                "epoch": int(raw["epoch"]),
                "split": raw["split"],
                "accuracy": float(raw["accuracy"]),
            })
        return rows
