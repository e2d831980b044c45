"""Shared domain types for inference traces and selection results.

Everything here is a passive value object: construction does cheap shape
coercion only, and semantic invariants are checked by :func:`validate_trace`,
which reports violations as data instead of raising. Algorithms that require
valid inputs enforce their own preconditions.

All indices are 0-based. Frame times are normalized to [0, 1] as
``frame_index / (n_frames - 1)`` (0 for a single-frame video).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

PROB_SUM_TOL = 1e-6
ATTENTION_ROW_TOL = 1e-4
TIME_TOL = 1e-6


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ProbabilityDistribution:
    """A next-token distribution over a vocabulary of size D."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _freeze(np.atleast_1d(self.probs)))

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[-1]

    def violations(self, where: str = "distribution") -> list[str]:
        p = np.asarray(self.probs, dtype=np.float64)
        out = []
        if p.ndim != 1:
            return [f"{where}: expected a 1-D probability vector, got shape {p.shape}"]
        if p.shape[0] < 2:
            out.append(f"{where}: vocabulary size must be >= 2, got {p.shape[0]}")
        if not np.all(np.isfinite(p)):
            out.append(f"{where}: contains NaN or Inf entries")
            return out
        if np.any(p < 0):
            out.append(f"{where}: contains negative entries (min {p.min():.3g})")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            out.append(f"{where}: entries sum to {total:.8f}, expected 1 within {PROB_SUM_TOL}")
        return out


@dataclass(frozen=True)
class GeneratedResponse:
    """An autoregressively generated answer.

    ``probs`` holds one probability row per generation step (steps x D) and
    ``chosen`` the token index emitted at each step.
    """

    probs: np.ndarray
    chosen: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _freeze(np.atleast_2d(self.probs)))
        object.__setattr__(self, "chosen", _freeze(np.atleast_1d(np.asarray(self.chosen, dtype=np.int32))))

    def __len__(self) -> int:
        return self.probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[1]

    def steps(self) -> Iterator[tuple[ProbabilityDistribution, int]]:
        for row, tok in zip(self.probs, self.chosen):
            yield ProbabilityDistribution(row), int(tok)

    def violations(self, where: str = "response") -> list[str]:
        out = []
        if len(self) == 0:
            return [f"{where}: must contain at least one step"]
        if self.chosen.shape[0] != self.probs.shape[0]:
            out.append(
                f"{where}: {self.chosen.shape[0]} chosen tokens for {self.probs.shape[0]} probability rows"
            )
        for i, row in enumerate(self.probs):
            out.extend(ProbabilityDistribution(row).violations(f"{where}.step[{i}]"))
        d = self.vocab_size
        bad = [int(t) for t in self.chosen if not 0 <= t < d]
        if bad:
            out.append(f"{where}: chosen token(s) {bad} outside vocabulary [0, {d})")
        return out


@dataclass(frozen=True)
class TokenRecord:
    """One visual token: feature vector plus where it came from."""

    feature: np.ndarray
    frame_index: int
    normalized_time: float
    spatial_slot: int
    relevance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature", _freeze(np.atleast_1d(self.feature)))


@dataclass(frozen=True)
class AttentionSource:
    """Cross-modal attention for one group.

    Either a precomputed per-head tensor (heads x queries x tokens) or raw
    query/key embeddings from which attention is recomputed. Exactly one of
    the two representations is present.
    """

    heads: int
    tensor: np.ndarray | None = None
    queries: np.ndarray | None = None
    keys: np.ndarray | None = None

    def __post_init__(self):
        if self.tensor is not None:
            object.__setattr__(self, "tensor", _freeze(self.tensor))
        if self.queries is not None:
            object.__setattr__(self, "queries", _freeze(np.atleast_2d(self.queries)))
        if self.keys is not None:
            object.__setattr__(self, "keys", _freeze(np.atleast_2d(self.keys)))

    @property
    def mode(self) -> str:
        return "tensor" if self.tensor is not None else "qk"

    @property
    def token_count(self) -> int:
        if self.tensor is not None:
            return self.tensor.shape[2]
        return self.keys.shape[0]

    @property
    def query_count(self) -> int:
        if self.tensor is not None:
            return self.tensor.shape[1]
        return self.queries.shape[0]

    def violations(self, where: str = "attention") -> list[str]:
        out = []
        has_tensor = self.tensor is not None
        has_qk = self.queries is not None or self.keys is not None
        if has_tensor == has_qk:
            return [f"{where}: exactly one of tensor or queries/keys must be set"]
        if self.heads < 1:
            out.append(f"{where}: head count must be >= 1, got {self.heads}")
        if has_tensor:
            if self.tensor.ndim != 3:
                out.append(f"{where}: tensor must be 3-D (heads x queries x tokens), got shape {self.tensor.shape}")
            elif self.tensor.shape[0] != self.heads:
                out.append(f"{where}: tensor has {self.tensor.shape[0]} heads, declared {self.heads}")
        else:
            if self.queries is None or self.keys is None:
                out.append(f"{where}: raw mode needs both queries and keys")
            else:
                if self.queries.shape[1] != self.keys.shape[1]:
                    out.append(
                        f"{where}: query dim {self.queries.shape[1]} != key dim {self.keys.shape[1]}"
                    )
                if self.keys.shape[1] % self.heads != 0:
                    out.append(
                        f"{where}: feature dim {self.keys.shape[1]} not divisible by {self.heads} heads"
                    )
        return out


@dataclass(frozen=True)
class GroupTrace:
    """Everything recorded for one frame group's forward pass."""

    group_id: int
    frame_indices: tuple[int, ...]
    token_features: np.ndarray  # V x d
    token_times: np.ndarray  # V, in [0, 1]
    token_slots: np.ndarray  # V, spatial position within frame
    token_frames: np.ndarray  # V, global frame index per token
    response: GeneratedResponse
    attention: AttentionSource
    answer_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frame_indices", tuple(int(f) for f in self.frame_indices))
        object.__setattr__(self, "token_features", _freeze(np.atleast_2d(self.token_features)))
        object.__setattr__(self, "token_times", _freeze(np.atleast_1d(self.token_times)))
        object.__setattr__(self, "token_slots", _freeze(np.atleast_1d(np.asarray(self.token_slots, dtype=np.int32))))
        object.__setattr__(self, "token_frames", _freeze(np.atleast_1d(np.asarray(self.token_frames, dtype=np.int64))))

    @property
    def token_count(self) -> int:
        return self.token_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.token_features.shape[1]

    def token_record(self, i: int) -> TokenRecord:
        return TokenRecord(
            feature=self.token_features[i],
            frame_index=int(self.token_frames[i]),
            normalized_time=float(self.token_times[i]),
            spatial_slot=int(self.token_slots[i]),
        )

    def token_records(self) -> list[TokenRecord]:
        return [self.token_record(i) for i in range(self.token_count)]


def normalized_frame_time(frame_index: int, n_frames: int) -> float:
    """Map a global frame index to [0, 1]; a single-frame video maps to 0."""
    if n_frames <= 1:
        return 0.0
    t = frame_index / (n_frames - 1)
    return min(max(t, 0.0), 1.0)


def validate_trace(trace: GroupTrace, n_frames: int | None = None) -> list[str]:
    """Check every trace invariant and return the list of violations.

    An empty list means the trace is well-formed. Validation is pure: it
    never mutates the trace and never raises for bad data.
    """
    where = f"group[{trace.group_id}]"
    out: list[str] = []

    if trace.group_id < 0:
        out.append(f"{where}: group_id must be >= 0")
    frames = trace.frame_indices
    if any(b <= a for a, b in zip(frames, frames[1:])):
        out.append(f"{where}.frame_indices: not strictly increasing: {list(frames)}")

    v = trace.token_count
    for name, arr in (("token_times", trace.token_times), ("token_slots", trace.token_slots),
                      ("token_frames", trace.token_frames)):
        if arr.shape[0] != v:
            out.append(f"{where}.{name}: length {arr.shape[0]} != token count {v}")
    if trace.token_features.ndim != 2:
        out.append(f"{where}.token_features: expected 2-D (V x d), got shape {trace.token_features.shape}")
    if not np.all(np.isfinite(np.asarray(trace.token_features, dtype=np.float64))):
        out.append(f"{where}.token_features: contains NaN or Inf")

    times = np.asarray(trace.token_times, dtype=np.float64)
    if times.size and (times.min() < -TIME_TOL or times.max() > 1 + TIME_TOL):
        out.append(f"{where}.token_times: values outside [0, 1]")
    frame_set = set(frames)
    bad_frames = sorted({int(f) for f in trace.token_frames} - frame_set)
    if bad_frames:
        out.append(f"{where}.token_frames: frames {bad_frames} not in the group's frame list")
    if n_frames is not None and trace.token_frames.shape[0] == times.shape[0]:
        expected = np.array([normalized_frame_time(int(f), n_frames) for f in trace.token_frames])
        if times.size and np.max(np.abs(expected - times)) > TIME_TOL:
            worst = int(np.argmax(np.abs(expected - times)))
            out.append(
                f"{where}.token_times[{worst}]: {times[worst]:.8f} does not match "
                f"frame {int(trace.token_frames[worst])} / ({n_frames} - 1)"
            )

    out.extend(trace.response.violations(f"{where}.response"))

    att = trace.attention
    out.extend(att.violations(f"{where}.attention"))
    if not att.violations():
        if att.token_count != v:
            out.append(
                f"{where}.attention: covers {att.token_count} tokens but the group has {v}"
            )
        if att.mode == "qk" and att.keys.shape[1] != trace.feature_dim:
            # Key embeddings and token features come from the same layer width.
            out.append(
                f"{where}.attention: key dim {att.keys.shape[1]} != feature dim {trace.feature_dim}"
            )
    return out


@dataclass(frozen=True)
class BudgetAllocation:
    """Integer per-group token budgets summing exactly to ``total``."""

    per_group: dict[int, int]
    total: int

    def __post_init__(self):
        got = sum(self.per_group.values())
        if got != self.total:
            raise ValueError(f"budgets sum to {got}, expected total {self.total}")
        if any(b < 0 for b in self.per_group.values()):
            raise ValueError("budgets must be non-negative")


@dataclass(frozen=True)
class SelectedToken:
    """One kept token plus the location metadata needed downstream."""

    group_id: int
    token_index: int
    frame_index: int
    spatial_slot: int
    normalized_time: float
    relevance: float


@dataclass(frozen=True)
class SelectionResult:
    """Final token set, sorted temporally then spatially."""

    selected: tuple[SelectedToken, ...]
    budgets: dict[int, int]
    groups_processed: tuple[int, ...]
    stop_reason: str  # "all_groups_processed" | "early_stop"
    budget_total: int
    requested_budget: int
    overselected_total: int

    def __post_init__(self):
        keys = [(t.group_id, t.token_index) for t in self.selected]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (group_id, token_index) pairs in selection")
        order = [(t.frame_index, t.spatial_slot) for t in self.selected]
        if order != sorted(order):
            raise ValueError("selection must be sorted by (frame_index, spatial_slot)")
