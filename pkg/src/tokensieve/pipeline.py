"""End-to-end token selection over a set of group traces.

Groups are visited in max-margin order (for marginal grouping) or
sequentially (for chunk/continuous grouping). Each visit yields the group's
response certainty and per-token relevance scores from the same trace. With
early stopping enabled, traversal halts as soon as ``group_threshold``
groups have shown mean bottom entropy below ``entropy_threshold``; budgets
are then allocated over the processed groups only. Selected tokens are
pooled, over-selected by a configurable rate, reduced back to the budget by
redundancy removal, and returned in temporal order.

Also hosts the answer-voting baselines (majority / weighted / Borda) that
aggregate per-group answers instead of re-selecting tokens.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .allocation import allocate_budgets, overselect_counts, select_top_tokens
from .certainty import CertaintyScore, response_certainty
from .config import PipelineConfig
from .grouping import max_margin_order
from .redundancy import build_similarity, remove_redundant
from .relevance import relevance_for_trace
from .types import GroupTrace, SelectedToken, SelectionResult, validate_trace

STOP_EARLY = "early_stop"
STOP_EXHAUSTED = "all_groups_processed"


@dataclass
class SchedulerState:
    """Traversal bookkeeping for one pipeline run."""

    traversal: tuple[int, ...]
    processed: list[tuple[int, CertaintyScore]] = field(default_factory=list)
    count: int = 0
    stopped: bool = False
    stop_reason: str = STOP_EXHAUSTED


def resolve_budget(config: PipelineConfig, traces: list[GroupTrace]) -> int:
    """Total token budget, from raw tokens or a frame-equivalent count."""
    alloc = config.allocation
    if alloc.budget_tokens is not None:
        if alloc.budget_tokens < 0:
            raise ValueError(f"budget must be >= 0, got {alloc.budget_tokens}")
        return int(alloc.budget_tokens)
    if alloc.budget_frames is not None:
        per_frame = {t.token_count // len(t.frame_indices) for t in traces}
        exact = all(t.token_count % len(t.frame_indices) == 0 for t in traces)
        if not exact or len(per_frame) != 1:
            raise ValueError(
                "allocation.budget_frames needs a uniform tokens-per-frame across groups; "
                "use allocation.budget_tokens instead"
            )
        return int(alloc.budget_frames) * per_frame.pop()
    raise ValueError("no budget configured: set allocation.budget_tokens or allocation.budget_frames")


def _mean_bottom_entropy(trace: GroupTrace, score: CertaintyScore, config: PipelineConfig) -> float:
    if score.mean_bottom_entropy is not None:
        return score.mean_bottom_entropy
    # Stop rule is defined on entropy; recompute when scoring uses another measure.
    return response_certainty(
        trace.response, "entropy", config.certainty.bottom_fraction
    ).mean_bottom_entropy


def run_pipeline(
    traces: list[GroupTrace],
    config: PipelineConfig,
    traversal: list[int] | None = None,
    strategy: str | None = None,
    validate: bool = True,
) -> SelectionResult:
    """Run certainty scoring, budget allocation, and redundancy removal.

    ``traversal`` overrides the visit order (useful for ablations); by
    default it follows ``strategy`` (max-margin for marginal grouping,
    sequential otherwise). ``strategy`` defaults to the configured one and
    should be the strategy the trace bundle was built with.
    """
    config.validate()
    by_id = {t.group_id: t for t in traces}
    g_count = len(traces)
    if len(by_id) != g_count:
        raise ValueError("duplicate group ids in traces")
    if set(by_id) != set(range(g_count)):
        missing = sorted(set(range(g_count)) - set(by_id))
        raise ValueError(f"missing trace for scheduled group(s) {missing}")

    if validate:
        violations = [v for t in traces for v in validate_trace(t)]
        if violations:
            raise ValueError("invalid trace(s): " + "; ".join(violations))

    strategy = strategy or config.grouping.strategy
    if traversal is None:
        order = max_margin_order(g_count) if strategy == "marginal" else list(range(g_count))
    else:
        order = [int(g) for g in traversal]
        if sorted(order) != list(range(g_count)):
            raise ValueError("traversal must be a permutation of the group ids")

    state = SchedulerState(traversal=tuple(order))
    relevances: dict[int, np.ndarray] = {}
    for gid in order:
        trace = by_id[gid]
        score = response_certainty(trace.response, config.certainty.measure, config.certainty.bottom_fraction)
        relevances[gid] = relevance_for_trace(trace)
        state.processed.append((gid, score))
        if config.early_stopping:
            if _mean_bottom_entropy(trace, score, config) < config.entropy_threshold:
                state.count += 1
                if state.count >= config.group_threshold:
                    state.stopped = True
                    state.stop_reason = STOP_EARLY
                    break
    if not state.stopped:
        state.stopped = True
        state.stop_reason = STOP_EXHAUSTED

    # Everything downstream is keyed by ascending group id so the outcome is
    # independent of the traversal order actually taken.
    processed = sorted(state.processed)
    ids = [gid for gid, _ in processed]
    certs = np.array([score.value for _, score in processed])
    caps = np.array([by_id[g].token_count for g in ids], dtype=np.int64)

    requested = resolve_budget(config, traces)
    budget = min(requested, int(caps.sum()))

    if strategy == "chunk":
        # Local-segment semantics: every chunk gets an equal share regardless
        # of certainty.
        alloc = allocate_budgets(np.zeros(len(ids)), budget, config.allocation.tau, caps, ids)
    else:
        alloc = allocate_budgets(certs, budget, config.allocation.tau, caps, ids)

    cap_map = {g: int(c) for g, c in zip(ids, caps)}
    if config.redundancy.enabled:
        counts = overselect_counts(alloc, config.allocation.overselect_rate, cap_map)
    else:
        counts = dict(alloc.per_group)

    pool_rows: list[tuple[int, int]] = []  # (group_id, token_index)
    for g in ids:
        for idx in select_top_tokens(relevances[g], counts[g]):
            pool_rows.append((g, int(idx)))

    times = np.array([by_id[g].token_times[i] for g, i in pool_rows], dtype=np.float64)
    rels = np.array([relevances[g][i] for g, i in pool_rows], dtype=np.float64)

    if config.redundancy.enabled and len(pool_rows) > budget:
        feats = np.stack([by_id[g].token_features[i] for g, i in pool_rows])
        sim = build_similarity(feats, times, config.redundancy.sigma)
        kept = remove_redundant(sim, rels, times, budget)
    else:
        kept = np.arange(len(pool_rows))

    selected = []
    for k in kept:
        g, i = pool_rows[int(k)]
        trace = by_id[g]
        selected.append(
            SelectedToken(
                group_id=g,
                token_index=i,
                frame_index=int(trace.token_frames[i]),
                spatial_slot=int(trace.token_slots[i]),
                normalized_time=float(trace.token_times[i]),
                relevance=float(relevances[g][i]),
            )
        )
    selected.sort(key=lambda t: (t.frame_index, t.spatial_slot, t.group_id, t.token_index))

    return SelectionResult(
        selected=tuple(selected),
        budgets=dict(alloc.per_group),
        groups_processed=tuple(ids),
        stop_reason=state.stop_reason,
        budget_total=budget,
        requested_budget=requested,
        overselected_total=len(pool_rows),
    )


def _softmax(values: np.ndarray) -> np.ndarray:
    z = values - values.max()
    e = np.exp(z)
    return e / e.sum()


def _tie_break(tied: list[str], labels: list[str], certainties: list[float]) -> str:
    # Winner among tied labels: the label owning the single most certain group.
    best = max(
        (c, -i) for i, (lab, c) in enumerate(zip(labels, certainties)) if lab in tied
    )
    return labels[-best[1]]


def vote(responses: list[tuple[str, CertaintyScore]], method: str, p: float = 0.9) -> str:
    """Aggregate per-group answers into one label.

    majority: most frequent answer; weighted: answers weighted by
    softmax-normalized certainty; borda: groups ranked by certainty, rank r
    of n contributing (n - r + 1) ** p. All ties resolve to the label of the
    most certain group.
    """
    if not responses:
        raise ValueError("need at least one response to vote")
    labels = [lab for lab, _ in responses]
    values = [score.value for _, score in responses]

    scores: dict[str, float]
    if method == "majority":
        counts = Counter(labels)
        scores = {lab: float(c) for lab, c in counts.items()}
    elif method == "weighted":
        weights = _softmax(np.array(values))
        scores = {}
        for lab, w in zip(labels, weights):
            scores[lab] = scores.get(lab, 0.0) + float(w)
    elif method == "borda":
        n = len(labels)
        # Rank by certainty descending; equal certainties keep input order.
        order = sorted(range(n), key=lambda i: (-values[i], i))
        scores = {}
        for rank, i in enumerate(order, start=1):
            scores[labels[i]] = scores.get(labels[i], 0.0) + (n - rank + 1) ** p
    else:
        raise ValueError(f"unknown voting method {method!r}")

    top = max(scores.values())
    tied = [lab for lab, s in scores.items() if s == top]
    if len(tied) == 1:
        return tied[0]
    return _tie_break(tied, labels, values)
