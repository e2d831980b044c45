"""Pure-numpy fallback for the greedy removal kernel.

Must stay behaviorally identical to the compiled kernel in
``_kernels.pyx``: same float64 comparisons, same tie-breaks. The compiled
and fallback paths are cross-checked in the test suite and timed against
each other in benchmarks/kernel_bench.py.
"""

from __future__ import annotations

import numpy as np

IMPL = "python"


def greedy_remove(S: np.ndarray, relevance: np.ndarray, times: np.ndarray, target: int) -> np.ndarray:
    """Greedily drop tokens from the most similar pairs until ``target`` remain.

    Each step finds the maximal off-diagonal entry of ``S`` over surviving
    tokens (ties: lexicographically smallest (i, j) with i < j) and discards
    the pair member with lower relevance (ties: larger time, then larger
    index). Returns the surviving indices in ascending order.
    """
    m = S.shape[0]
    if target > m:
        raise ValueError(f"target {target} exceeds token count {m}")
    if target == m:
        return np.arange(m, dtype=np.int64)

    # Upper triangle only: pair (i, j) always has i < j.
    upper = np.where(np.triu(np.ones((m, m), dtype=bool), k=1), np.asarray(S, dtype=np.float64), -np.inf)
    alive = np.ones(m, dtype=bool)
    best_val = upper.max(axis=1) if m > 1 else np.full(m, -np.inf)
    best_j = upper.argmax(axis=1) if m > 1 else np.zeros(m, dtype=np.int64)

    for _ in range(m - target):
        if alive.sum() == 1:
            # No pair left to compare; drop the lone survivor.
            alive[np.flatnonzero(alive)[0]] = False
            continue
        i = int(np.argmax(np.where(alive, best_val, -np.inf)))
        j = int(best_j[i])

        if relevance[i] < relevance[j]:
            victim = i
        elif relevance[j] < relevance[i]:
            victim = j
        elif times[i] > times[j]:
            victim = i
        elif times[j] > times[i]:
            victim = j
        else:
            victim = j  # same relevance and time: drop the larger index

        alive[victim] = False
        upper[:, victim] = -np.inf
        upper[victim, :] = -np.inf
        best_val[victim] = -np.inf
        stale = np.flatnonzero(alive & (best_j == victim))
        if stale.size:
            best_val[stale] = upper[stale].max(axis=1)
            best_j[stale] = upper[stale].argmax(axis=1)

    return np.flatnonzero(alive).astype(np.int64)
