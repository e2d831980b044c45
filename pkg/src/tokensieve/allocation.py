"""Group-level token budgets and per-group top-k selection.

Budgets follow a temperature-controlled softmax over group certainties:
higher-certainty groups get a larger share of the global budget B. The
real-valued shares are integerized by largest remainder (exact sum, ties to
the lower group id) and then reconciled with per-group capacities by moving
overflow units to the uncapped group with the largest remaining ideal share.
"""

from __future__ import annotations

import math

import numpy as np

from .types import BudgetAllocation

# Absorbs float noise in count * (1 + rate) before the ceiling is taken,
# so e.g. 10 * 1.1 == 11.000000000000002 still rounds up to 11, not 12.
_CEIL_GUARD = 1e-9


def softmax_weights(certainties: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    z = np.asarray(certainties, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(shares).astype(np.int64)
    remaining = total - int(base.sum())
    if remaining > 0:
        frac = shares - np.floor(shares)
        # Largest fractional part first; ties go to the lower group id.
        order = np.lexsort((np.arange(len(shares)), -frac))
        base[order[:remaining]] += 1
    return base


def allocate_budgets(
    certainties,
    total: int,
    tau: float,
    capacities,
    group_ids=None,
) -> BudgetAllocation:
    """Split ``total`` tokens across groups by softmax(certainties / tau).

    ``capacities`` caps each group at its token count; overflow is moved,
    one unit at a time, to the group with the largest remaining ideal share
    among those still under capacity. The result always sums to ``total``.
    """
    c = np.asarray(certainties, dtype=np.float64)
    caps = np.asarray(capacities, dtype=np.int64)
    if c.ndim != 1 or c.shape != caps.shape:
        raise ValueError("certainties and capacities must be 1-D and the same length")
    if c.shape[0] < 1:
        raise ValueError("need at least one group")
    if total < 0:
        raise ValueError(f"budget must be >= 0, got {total}")
    if np.any(caps < 0):
        raise ValueError("capacities must be non-negative")
    if int(caps.sum()) < total:
        raise ValueError("budget exceeds available tokens")

    ids = list(range(len(c))) if group_ids is None else [int(g) for g in group_ids]
    if len(ids) != len(c):
        raise ValueError("group_ids length mismatch")

    shares = total * softmax_weights(c, tau)
    budgets = _largest_remainder(shares, total)

    over = budgets > caps
    if np.any(over):
        excess = int((budgets[over] - caps[over]).sum())
        budgets = np.minimum(budgets, caps)
        for _ in range(excess):
            room = budgets < caps
            # Largest remaining ideal share wins; ties go to the lower id.
            gap = np.where(room, shares - budgets, -np.inf)
            budgets[int(np.argmax(gap))] += 1

    return BudgetAllocation(per_group={g: int(b) for g, b in zip(ids, budgets)}, total=total)


def select_top_tokens(scores, count: int) -> np.ndarray:
    """Indices of the ``count`` highest-scoring tokens, in index order.

    Ties are broken toward the lower token index.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= count <= s.shape[0]:
        raise ValueError(f"count {count} outside [0, {s.shape[0]}]")
    order = np.lexsort((np.arange(s.shape[0]), -s))
    return np.sort(order[:count])


def overselect_counts(alloc: BudgetAllocation, rate: float, capacities: dict[int, int]) -> dict[int, int]:
    """Per-group counts inflated by ``rate`` and clipped to capacity."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"over-selection rate must be in [0, 1], got {rate}")
    counts = {}
    for g, b in alloc.per_group.items():
        raw = math.ceil(b * (1.0 + rate) - _CEIL_GUARD) if b else 0
        counts[g] = min(int(capacities[g]), raw)
    return counts
