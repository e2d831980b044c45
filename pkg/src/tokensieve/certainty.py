"""Certainty and uncertainty measures over generated responses.

Three interchangeable per-token measures, all oriented so that higher means
more certain:

* ``entropy``     -- negated Shannon entropy of the next-token distribution,
* ``confidence``  -- probability of the argmax token,
* ``kl_uniform``  -- KL divergence from the uniform distribution,
                     which equals ``ln D - entropy``.

A response-level score is the mean over the least-certain fraction of the
generated tokens (default: the bottom 10%), so a single shaky token in an
otherwise confident answer still drags the score down.

Natural logarithms throughout; entropy is measured in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import GeneratedResponse, ProbabilityDistribution

MEASURES = ("entropy", "confidence", "kl_uniform")

# Probabilities below this contribute exactly 0 to entropy (the 0*ln 0 limit).
ENTROPY_FLOOR = 1e-12


@dataclass(frozen=True)
class CertaintyScore:
    """Response-level certainty; higher value means more certain.

    ``mean_bottom_entropy`` is populated for the entropy measure only and
    equals ``-value`` there; it is what early stopping compares against its
    threshold.
    """

    value: float
    measure: str
    mean_bottom_entropy: float | None = None


def _as_prob_matrix(dist) -> np.ndarray:
    p = dist.probs if isinstance(dist, ProbabilityDistribution) else dist
    return np.asarray(p, dtype=np.float64)


def _check_valid(dist) -> np.ndarray:
    p = _as_prob_matrix(dist)
    d = ProbabilityDistribution(p) if p.ndim == 1 else None
    if d is not None:
        bad = d.violations()
        if bad:
            raise ValueError("; ".join(bad))
    return p


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    safe = np.where(p < ENTROPY_FLOOR, 1.0, p)
    terms = np.where(p < ENTROPY_FLOOR, 0.0, -p * np.log(safe))
    return terms.sum(axis=-1)


def token_entropy(dist) -> float:
    """Shannon entropy of one distribution, in nats."""
    p = _check_valid(dist)
    return float(_entropy_rows(p))


def token_kl_uniform(dist) -> float:
    """KL(P || Uniform(D)) = ln D - entropy(P)."""
    p = _check_valid(dist)
    return math.log(p.shape[-1]) - float(_entropy_rows(p))


def token_confidence(dist) -> float:
    """Probability of the most likely token."""
    p = _check_valid(dist)
    return float(p.max())


def _per_token_certainties(resp: GeneratedResponse, measure: str) -> np.ndarray:
    p = np.asarray(resp.probs, dtype=np.float64)
    if measure == "entropy":
        return -_entropy_rows(p)
    if measure == "confidence":
        return p.max(axis=1)
    if measure == "kl_uniform":
        return math.log(resp.vocab_size) - _entropy_rows(p)
    raise ValueError(f"unknown certainty measure {measure!r}; expected one of {MEASURES}")


def response_certainty(
    resp: GeneratedResponse,
    measure: str = "entropy",
    bottom_fraction: float = 0.10,
) -> CertaintyScore:
    """Mean certainty of the least-certain ``bottom_fraction`` of tokens.

    The bottom-set size is ``max(1, ceil(len(resp) * bottom_fraction))`` so
    even a one-token answer yields a score. Ties at the cut are broken by
    earlier step index.
    """
    if len(resp) == 0:
        raise ValueError("response must contain at least one step")
    if not 0.0 < bottom_fraction <= 1.0:
        raise ValueError(f"bottom_fraction must be in (0, 1], got {bottom_fraction}")

    c = _per_token_certainties(resp, measure)
    m = max(1, math.ceil(len(c) * bottom_fraction))
    # Primary key: certainty ascending; secondary: step index ascending.
    order = np.lexsort((np.arange(len(c)), c))
    value = float(c[order[:m]].mean())
    mbe = -value if measure == "entropy" else None
    return CertaintyScore(value=value, measure=measure, mean_bottom_entropy=mbe)
