# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled greedy removal kernel.

Behaviorally identical to ``_kernels_py.greedy_remove``; see there for the
contract. Row maxima are cached and only rescanned when the cached partner
dies, which keeps the total work near O(M^2) for M tokens.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPL = "compiled"

cdef double NEG_INF = -np.inf


cdef void _rescan_row(double[:, ::1] S, unsigned char[::1] alive,
                      double[::1] best_val, Py_ssize_t[::1] best_j,
                      Py_ssize_t i, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t j
    cdef double best = NEG_INF
    cdef Py_ssize_t arg = -1
    for j in range(i + 1, m):
        if alive[j] and S[i, j] > best:
            best = S[i, j]
            arg = j
    best_val[i] = best
    best_j[i] = arg


def greedy_remove(S, relevance, times, Py_ssize_t target):
    """Drop tokens from maximal-similarity pairs until ``target`` remain."""
    cdef double[:, ::1] sim = np.ascontiguousarray(S, dtype=np.float64)
    cdef double[::1] rel = np.ascontiguousarray(relevance, dtype=np.float64)
    cdef double[::1] tim = np.ascontiguousarray(times, dtype=np.float64)
    cdef Py_ssize_t m = sim.shape[0]
    if target > m:
        raise ValueError(f"target {target} exceeds token count {m}")

    alive_arr = np.ones(m, dtype=np.uint8)
    cdef unsigned char[::1] alive = alive_arr
    if target == m:
        return np.arange(m, dtype=np.int64)

    best_val_arr = np.empty(m, dtype=np.float64)
    best_j_arr = np.empty(m, dtype=np.intp)
    cdef double[::1] best_val = best_val_arr
    cdef Py_ssize_t[::1] best_j = best_j_arr

    cdef Py_ssize_t i, j, step, victim, arg_i
    cdef double best
    with nogil:
        for i in range(m):
            _rescan_row(sim, alive, best_val, best_j, i, m)

        for step in range(m - target):
            # Global maximum over cached row maxima: smallest i wins ties.
            best = NEG_INF
            arg_i = -1
            for i in range(m):
                if alive[i] and best_j[i] >= 0 and best_val[i] > best:
                    best = best_val[i]
                    arg_i = i
            if arg_i < 0:
                # Single survivor but removals still owed: drop it.
                for i in range(m):
                    if alive[i]:
                        alive[i] = 0
                        break
                continue
            i = arg_i
            j = best_j[i]

            if rel[i] < rel[j]:
                victim = i
            elif rel[j] < rel[i]:
                victim = j
            elif tim[i] > tim[j]:
                victim = i
            elif tim[j] > tim[i]:
                victim = j
            else:
                victim = j

            alive[victim] = 0
            best_val[victim] = NEG_INF
            best_j[victim] = -1
            for i in range(victim):
                if alive[i] and best_j[i] == victim:
                    _rescan_row(sim, alive, best_val, best_j, i, m)

    return np.flatnonzero(alive_arr).astype(np.int64)
