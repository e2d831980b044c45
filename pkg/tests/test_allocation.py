import itertools

import numpy as np
import pytest

from tokensieve.allocation import (
    allocate_budgets,
    overselect_counts,
    select_top_tokens,
    softmax_weights,
)
from tokensieve.types import BudgetAllocation


def brute_force_best_distance(shares, total, caps):
    """Minimal sum |b_g - s_g| over cap-respecting integer vectors summing to total."""
    g = len(shares)
    best = None
    for combo in itertools.product(*(range(c + 1) for c in caps)):
        if sum(combo) != total:
            continue
        dist = sum(abs(b - s) for b, s in zip(combo, shares))
        if best is None or dist < best:
            best = dist
    return best


class TestAllocateBudgets:
    def test_symmetry(self):
        alloc = allocate_budgets([0.0, 0.0], 100, 2.0, [1000, 1000])
        assert alloc.per_group == {0: 50, 1: 50}

    def test_worked_example(self):
        alloc = allocate_budgets([-0.5, -2.5], 100, 2.0, [1000, 1000])
        assert alloc.per_group == {0: 73, 1: 27}

    def test_shift_invariance(self, rng):
        for _ in range(50):
            g = int(rng.integers(1, 8))
            c = rng.normal(size=g)
            caps = rng.integers(5, 50, size=g)
            b = int(rng.integers(0, caps.sum() + 1))
            base = allocate_budgets(c, b, 2.0, caps)
            shifted = allocate_budgets(c + rng.normal(), b, 2.0, caps)
            assert base.per_group == shifted.per_group

    def test_sum_and_caps(self, rng):
        for _ in range(300):
            g = int(rng.integers(1, 10))
            c = rng.normal(scale=2.0, size=g)
            caps = rng.integers(0, 40, size=g)
            b = int(rng.integers(0, caps.sum() + 1))
            tau = float(rng.uniform(0.2, 5.0))
            alloc = allocate_budgets(c, b, tau, caps)
            assert sum(alloc.per_group.values()) == b
            assert all(alloc.per_group[i] <= caps[i] for i in range(g))

    def test_over_capacity_budget_rejected(self):
        with pytest.raises(ValueError, match="budget exceeds available tokens"):
            allocate_budgets([0.0, 0.0], 11, 2.0, [5, 5])

    def test_monotone_weights(self, rng):
        c = np.array([1.0, 0.2, -0.5])
        w = softmax_weights(c, 2.0)
        assert w[0] > w[1] > w[2]

    def test_monotone_budgets_without_caps(self, rng):
        for _ in range(100):
            g = int(rng.integers(2, 7))
            c = rng.normal(size=g)
            alloc = allocate_budgets(c, 200, 2.0, [10_000] * g)
            for i in range(g):
                for j in range(g):
                    if c[i] > c[j]:
                        assert alloc.per_group[i] >= alloc.per_group[j]

    def test_high_temperature_is_uniform(self):
        alloc = allocate_budgets([5.0, -3.0, 1.0, 0.0], 103, 1e6, [1000] * 4)
        values = list(alloc.per_group.values())
        assert max(values) - min(values) <= 1

    def test_low_temperature_winner_takes_all(self):
        alloc = allocate_budgets([2.0, 1.0, 0.0], 30, 1e-9, [100, 100, 100])
        assert alloc.per_group[0] == 30
        capped = allocate_budgets([2.0, 1.0, 0.0], 30, 1e-9, [10, 100, 100])
        assert capped.per_group[0] == 10

    def test_brute_force_l1_optimality(self, rng):
        for _ in range(120):
            g = int(rng.integers(1, 5))
            c = rng.normal(size=g)
            caps = [int(x) for x in rng.integers(0, 12, size=g)]
            if sum(caps) == 0:
                continue
            b = int(rng.integers(0, min(20, sum(caps)) + 1))
            tau = float(rng.uniform(0.5, 4.0))
            shares = b * softmax_weights(np.asarray(c, dtype=float), tau)
            alloc = allocate_budgets(c, b, tau, caps)
            got = sum(abs(alloc.per_group[i] - shares[i]) for i in range(g))
            best = brute_force_best_distance(shares, b, caps)
            assert got == pytest.approx(best, abs=1e-9)

    def test_explicit_group_ids(self):
        alloc = allocate_budgets([0.0, 1.0], 10, 2.0, [20, 20], group_ids=[3, 7])
        assert set(alloc.per_group) == {3, 7}
        assert sum(alloc.per_group.values()) == 10

    def test_zero_budget(self):
        assert allocate_budgets([1.0], 0, 2.0, [5]).per_group == {0: 0}


class TestSelectTopTokens:
    def test_all(self):
        np.testing.assert_array_equal(select_top_tokens([0.3, 0.1, 0.5], 3), [0, 1, 2])

    def test_none(self):
        assert select_top_tokens([0.3, 0.1], 0).size == 0

    def test_tie_break_lower_index(self):
        np.testing.assert_array_equal(select_top_tokens([0.2, 0.9, 0.9, 0.1], 2), [1, 2])

    def test_output_sorted(self):
        got = select_top_tokens([0.1, 0.9, 0.2, 0.8], 2)
        np.testing.assert_array_equal(got, [1, 3])

    def test_count_too_large(self):
        with pytest.raises(ValueError):
            select_top_tokens([0.1], 2)


class TestOverselectCounts:
    def _alloc(self, budgets):
        return BudgetAllocation(per_group=budgets, total=sum(budgets.values()))

    def test_zero_rate_identity(self):
        alloc = self._alloc({0: 10, 1: 7})
        assert overselect_counts(alloc, 0.0, {0: 100, 1: 100}) == {0: 10, 1: 7}

    def test_ten_percent(self):
        alloc = self._alloc({0: 10})
        assert overselect_counts(alloc, 0.1, {0: 100}) == {0: 11}

    def test_capacity_caps(self):
        alloc = self._alloc({0: 10})
        assert overselect_counts(alloc, 0.1, {0: 10}) == {0: 10}

    def test_rounds_up(self):
        alloc = self._alloc({0: 5})
        assert overselect_counts(alloc, 0.1, {0: 100}) == {0: 6}

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            overselect_counts(self._alloc({0: 1}), -0.2, {0: 5})
