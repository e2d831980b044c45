"""Location-aware redundancy removal over a pooled token set.

Pairwise similarity combines feature and temporal proximity:

    S = cosine(feature_i, feature_j) + exp(-(t_i - t_j)^2 / sigma)

Removal then iterates: take the most similar surviving pair, drop its
lower-relevance member, repeat until the target count remains. The greedy
loop is the hot path; a compiled kernel is used when available and a
pure-numpy fallback otherwise (force the fallback with TOKENSIEVE_PURE=1).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

if os.environ.get("TOKENSIEVE_PURE"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

KERNEL_IMPL = _impl.IMPL
HAVE_COMPILED_KERNEL = KERNEL_IMPL == "compiled"


@dataclass(frozen=True)
class SimilarityMatrix:
    """Combined similarity with its two components kept for diagnostics."""

    combined: np.ndarray
    feature_part: np.ndarray
    temporal_part: np.ndarray

    @property
    def size(self) -> int:
        return self.combined.shape[0]


def build_similarity(features: np.ndarray, times: np.ndarray, sigma: float = 0.3) -> SimilarityMatrix:
    """Pairwise similarity for M tokens given features (M x d) and times (M,)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if x.ndim != 2 or t.ndim != 1 or x.shape[0] != t.shape[0]:
        raise ValueError("features must be (M x d) and times (M,)")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero-norm feature vector at index {int(np.argmin(norms))}")

    unit = x / norms[:, None]
    feat = unit @ unit.T
    feat = (feat + feat.T) / 2.0  # exact symmetry despite BLAS rounding
    dt = t[:, None] - t[None, :]
    temp = np.exp(-(dt * dt) / sigma)
    return SimilarityMatrix(combined=feat + temp, feature_part=feat, temporal_part=temp)


def remove_redundant(
    similarity: SimilarityMatrix | np.ndarray,
    relevances: np.ndarray,
    times: np.ndarray,
    target: int,
) -> np.ndarray:
    """Indices (ascending) of the ``target`` tokens kept after greedy removal."""
    s = similarity.combined if isinstance(similarity, SimilarityMatrix) else np.asarray(similarity)
    m = s.shape[0]
    if target > m:
        raise ValueError(f"target {target} exceeds token count {m}")
    if target == m:
        return np.arange(m, dtype=np.int64)
    return _impl.greedy_remove(
        np.ascontiguousarray(s, dtype=np.float64),
        np.ascontiguousarray(relevances, dtype=np.float64),
        np.ascontiguousarray(times, dtype=np.float64),
        target,
    )
