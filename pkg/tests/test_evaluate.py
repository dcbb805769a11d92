"""Accuracy arithmetic, table aggregation and the signed-rank test."""

import itertools
import math

import numpy as np
import pytest
import scipy.stats

from udalab.errors import DegenerateSampleError, ValidationError
from udalab.evaluate import (
    AccuracyTable,
    accuracy,
    aggregate,
    exact_sign_tail,
    method_mean,
    read_results_csv,
    round2,
    significant,
    wilcoxon_signed_rank,
    write_csv,
    RESULTS_FIELDS,
)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 0, 2], [1, 0, 2]) == 100.0

    def test_none_correct(self):
        assert accuracy([1, 1, 1], [0, 0, 0]) == 0.0

    def test_three_of_four(self):
        assert accuracy([1, 0, 2, 2], [1, 0, 2, 1]) == 75.0

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            accuracy([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            accuracy([1], [1, 2])


class TestAggregate:
    # reference per-run accuracy tables from published Office-31 baselines;
    # the printed averages pin the two-decimal half-up convention
    def test_three_run_column(self):
        assert aggregate([81.46, 81.04, 80.62]) == 81.04

    def test_three_run_column_with_repeats(self):
        assert aggregate([76.43, 76.04, 76.04]) == 76.17

    def test_four_run_column_needs_half_up(self):
        assert aggregate([76.88, 70.1, 77.08, 73.96]) == 74.51

    def test_single_row_is_itself(self):
        assert aggregate([93.21]) == 93.21

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            aggregate([])

    def test_round2_half_up(self):
        assert round2(81.035) == 81.04
        assert round2(81.034999) == 81.03


class TestMethodMean:
    def test_published_six_task_rows(self):
        assert method_mean([86.87, 85.98, 97.44, 64.54, 99.17, 63.09]) == 82.85
        assert method_mean([82.92, 78.74, 96.05, 64.05, 99.93, 65.01]) == 81.12

    def test_identical_entries(self):
        assert method_mean([70.5] * 6) == 70.5

    def test_table_row_type(self):
        table = AccuracyTable.of("dann", "toy", [80.0, 82.0, 81.0])
        assert table.average == 81.0
        assert table.runs == (80.0, 82.0, 81.0)


def brute_force_tail(ranks, t_obs, direction):
    """Independent enumeration over sign tuples via itertools."""
    n = len(ranks)
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        t = sum(r for r, s in zip(ranks, signs) if s)
        if direction == "greater" and t >= t_obs:
            count += 1
        if direction == "less" and t <= t_obs:
            count += 1
    return count / 2.0 ** n


class TestWilcoxon:
    def test_fifteen_positive_differences_anchor(self):
        xs = np.arange(15, dtype=float) + 10.0
        ys = np.arange(15, dtype=float)  # all differences positive, no ties
        result = wilcoxon_signed_rank(xs, ys, "greater")
        assert result.n == 15
        assert result.t_minus == 0.0
        assert result.t_plus == 120.0
        assert round(result.z, 4) == 3.4078
        assert result.p_exact == 2.0 ** -15

    def test_exact_matches_brute_force_small(self, rng):
        xs = rng.normal(size=8)
        ys = rng.normal(size=8)
        result = wilcoxon_signed_rank(xs, ys, "greater")
        diffs = xs - ys
        ranks = scipy.stats.rankdata(np.abs(diffs[diffs != 0]))
        t_plus = ranks[diffs[diffs != 0] > 0].sum()
        assert result.p_exact == brute_force_tail(list(ranks), t_plus, "greater")

    def test_matches_scipy_exact(self, rng):
        for _ in range(10):
            xs = rng.normal(size=12)
            ys = rng.normal(size=12)
            ours = wilcoxon_signed_rank(xs, ys, "greater")
            ref = scipy.stats.wilcoxon(xs, ys, alternative="greater", method="exact")
            assert abs(ours.p_exact - ref.pvalue) < 1e-12

    def test_matches_scipy_normal_approximation(self, rng):
        xs = rng.normal(size=40)
        ys = rng.normal(size=40)
        ours = wilcoxon_signed_rank(xs, ys, "greater")
        ref = scipy.stats.wilcoxon(xs, ys, alternative="greater", method="approx",
                                   correction=False)
        assert abs(ours.p_approx - ref.pvalue) < 1e-10
        assert ours.p_exact is None  # enumeration capped at n = 20

    def test_swap_and_flip_symmetry(self, rng):
        xs = rng.normal(size=10)
        ys = rng.normal(size=10)
        a = wilcoxon_signed_rank(xs, ys, "greater")
        b = wilcoxon_signed_rank(ys, xs, "less")
        assert a.p_exact == b.p_exact
        assert abs(a.p_approx - b.p_approx) < 1e-15

    def test_rank_sums_partition(self, rng):
        xs = rng.normal(size=9)
        ys = rng.normal(size=9)
        result = wilcoxon_signed_rank(xs, ys, "greater")
        assert result.t_plus + result.t_minus == result.n * (result.n + 1) / 2

    def test_ties_get_average_ranks(self):
        xs = np.array([2.0, 2.0, 5.0, 0.0, 1.0, 3.0])
        ys = np.zeros(6)
        result = wilcoxon_signed_rank(xs, ys, "greater")
        # zero difference dropped; |d| = 2, 2, 5, 1, 3 -> ranks 2.5, 2.5, 5, 1, 4
        assert result.n == 5
        assert result.t_plus == 2.5 + 2.5 + 5.0 + 1.0 + 4.0

    def test_all_zero_differences_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            wilcoxon_signed_rank([1.0] * 6, [1.0] * 6, "greater")

    def test_too_few_nonzero_differences(self):
        with pytest.raises(ValidationError):
            wilcoxon_signed_rank([1, 2, 3, 4.5], [0, 1, 2, 3.0], "greater")

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            wilcoxon_signed_rank([1, 2, 3], [1, 2], "greater")

    def test_unknown_alternative(self):
        with pytest.raises(ValidationError):
            wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0], "two-sided")

    def test_significance_helper(self):
        xs = np.arange(15, dtype=float) + 10.0
        ys = np.arange(15, dtype=float)
        assert significant(wilcoxon_signed_rank(xs, ys, "greater"))
        assert not significant(wilcoxon_signed_rank(ys, xs, "greater"))

    def test_normal_ordering_agrees_with_exact_for_small_n(self):
        # across all achievable rank sums the two p values must order identically
        for n in range(5, 10):
            ranks = list(range(1, n + 1))
            mu = n * (n + 1) / 4.0
            sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
            exact = [exact_sign_tail(ranks, t, "greater") for t in range(n * (n + 1) // 2 + 1)]
            approx = [0.5 * math.erfc((t - mu) / sigma / math.sqrt(2.0))
                      for t in range(n * (n + 1) // 2 + 1)]
            assert all(a >= b for a, b in zip(exact, exact[1:]))
            assert all(a >= b for a, b in zip(approx, approx[1:]))


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = [
            {"method": "dann", "task": "moons(a=1,b=2)", "seed": 3, "run_index": 0,
             "epoch": 0, "split": "target", "accuracy": 81.19999999999999},
        ]
        path = tmp_path / "results.csv"
        write_csv(path, RESULTS_FIELDS, rows)
        back = read_results_csv(path)
        assert back == [dict(rows[0], accuracy=81.19999999999999)]

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("method,task\na,b\n")
        with pytest.raises(ValidationError):
            read_results_csv(path)

    def test_deterministic_bytes(self, tmp_path):
        rows = [{"method": "m", "task": "t", "seed": 1, "run_index": 0, "epoch": i,
                 "split": "target", "accuracy": 50.0 + i / 3.0} for i in range(5)]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, RESULTS_FIELDS, rows)
        write_csv(b, RESULTS_FIELDS, rows)
        assert a.read_bytes() == b.read_bytes()
