"""Per-token prompt-relevance scores from cross-modal attention.

The relevance of visual token v is the attention it receives from text
queries, summed over heads and maximized over queries:

    r_v = max_t sum_h attn[h][t][v]

Scores therefore live in [0, H]. They can be computed from a precomputed
attention tensor (rows may sum to less than 1 when the original softmax
spanned non-visual keys) or recomputed from raw query/key embeddings, in
which case the softmax is taken over the visual keys only.
"""

from __future__ import annotations

import numpy as np

from .types import ATTENTION_ROW_TOL, AttentionSource, GroupTrace


def relevance_from_attention(attn: np.ndarray) -> np.ndarray:
    """Scores from a (heads x queries x tokens) attention tensor."""
    a = np.asarray(attn, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"attention tensor must be 3-D (heads x queries x tokens), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attention tensor contains NaN or Inf")
    if np.any(a < 0):
        raise ValueError("attention weights must be non-negative")
    row_sums = a.sum(axis=2)
    if row_sums.size and row_sums.max() > 1.0 + ATTENTION_ROW_TOL:
        h, t = np.unravel_index(int(np.argmax(row_sums)), row_sums.shape)
        raise ValueError(
            f"attention row (head {h}, query {t}) sums to {row_sums[h, t]:.6f} > 1"
        )
    return a.sum(axis=0).max(axis=0)


def attention_from_qk(queries: np.ndarray, keys: np.ndarray, heads: int) -> np.ndarray:
    """Materialize the (heads x queries x tokens) attention tensor.

    The feature dimension is split into ``heads`` contiguous slices; each
    head's row is a scaled-dot-product softmax over the visual keys.
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2:
        raise ValueError("queries and keys must be 2-D (rows x feature dim)")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    d = q.shape[1]
    if heads < 1 or d < heads or d % heads != 0:
        raise ValueError(f"feature dim {d} not divisible by head count {heads}")
    dh = d // heads

    t_count, v_count = q.shape[0], k.shape[0]
    attn = np.empty((heads, t_count, v_count), dtype=np.float64)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        logits = (q[:, sl] @ k[:, sl].T) / np.sqrt(dh)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        attn[h] = e / e.sum(axis=1, keepdims=True)
    return attn


def relevance_from_qk(queries: np.ndarray, keys: np.ndarray, heads: int) -> np.ndarray:
    """Scores from raw query/key embeddings; softmax spans visual keys only."""
    return relevance_from_attention(attention_from_qk(queries, keys, heads))


def relevance_for_trace(trace: GroupTrace) -> np.ndarray:
    """Dispatch on the trace's attention representation."""
    att: AttentionSource = trace.attention
    if att.mode == "tensor":
        scores = relevance_from_attention(att.tensor)
    else:
        scores = relevance_from_qk(att.queries, att.keys, att.heads)
    if scores.shape[0] != trace.token_count:
        raise ValueError(
            f"group[{trace.group_id}]: attention covers {scores.shape[0]} tokens, "
            f"trace has {trace.token_count}"
        )
    return scores
