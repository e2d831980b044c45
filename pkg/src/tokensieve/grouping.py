"""Frame grouping strategies and the max-margin traversal order.

A video of N sampled frames is partitioned into G groups of at most K
frames. Three strategies:

* ``marginal``   -- group g takes frames {g, g+G, g+2G, ...}: every group is
                    a strided sample spanning the whole video.
* ``chunk``      -- consecutive blocks [0..K), [K..2K), ...; downstream
                    processing treats each block as a local segment.
* ``continuous`` -- the same block partition as ``chunk`` but traversed and
                    budgeted globally like ``marginal``.

The max-margin traversal visits group ids in base-2 van der Corput order
scaled to G, so every prefix of the traversal is spread as evenly as
possible over the group range and the first group is always visited first.
"""

from __future__ import annotations

from dataclasses import dataclass

STRATEGIES = ("marginal", "continuous", "chunk")


@dataclass(frozen=True)
class GroupingPlan:
    strategy: str
    group_count: int
    groups: tuple[tuple[int, ...], ...]
    traversal: tuple[int, ...]


def van_der_corput(n: int) -> float:
    """n-th element of the base-2 van der Corput sequence (vdc(0) = 0)."""
    value, denom = 0.0, 1.0
    while n:
        denom *= 2.0
        value += (n & 1) / denom
        n >>= 1
    return value


def max_margin_order(group_count: int) -> list[int]:
    """Traversal order with maximal prefix spread; always starts at 0."""
    if group_count < 1:
        raise ValueError(f"group count must be >= 1, got {group_count}")
    order: list[int] = []
    seen: set[int] = set()
    n = 0
    while len(order) < group_count:
        g = int(van_der_corput(n) * group_count)
        if g not in seen:
            seen.add(g)
            order.append(g)
        n += 1
    return order


def _check_nk(n_frames: int, max_per_group: int):
    if n_frames < 1:
        raise ValueError(f"frame count must be >= 1, got {n_frames}")
    if max_per_group < 1:
        raise ValueError(f"max frames per group must be >= 1, got {max_per_group}")


def split_marginal(n_frames: int, max_per_group: int) -> GroupingPlan:
    """Strided partition: G = ceil(N / K), group g = {g, g+G, ...}."""
    _check_nk(n_frames, max_per_group)
    g_count = -(-n_frames // max_per_group)
    groups = tuple(tuple(range(g, n_frames, g_count)) for g in range(g_count))
    return GroupingPlan(
        strategy="marginal",
        group_count=g_count,
        groups=groups,
        traversal=tuple(max_margin_order(g_count)),
    )


def _block_partition(n_frames: int, max_per_group: int) -> tuple[tuple[int, ...], ...]:
    return tuple(
        tuple(range(start, min(start + max_per_group, n_frames)))
        for start in range(0, n_frames, max_per_group)
    )


def split_chunk(n_frames: int, max_per_group: int) -> GroupingPlan:
    """Consecutive blocks, processed as independent local segments."""
    _check_nk(n_frames, max_per_group)
    groups = _block_partition(n_frames, max_per_group)
    return GroupingPlan(
        strategy="chunk",
        group_count=len(groups),
        groups=groups,
        traversal=tuple(range(len(groups))),
    )


def split_continuous(n_frames: int, max_per_group: int) -> GroupingPlan:
    """Consecutive blocks with global (sequential) traversal semantics."""
    _check_nk(n_frames, max_per_group)
    groups = _block_partition(n_frames, max_per_group)
    return GroupingPlan(
        strategy="continuous",
        group_count=len(groups),
        groups=groups,
        traversal=tuple(range(len(groups))),
    )


def split(strategy: str, n_frames: int, max_per_group: int) -> GroupingPlan:
    if strategy == "marginal":
        return split_marginal(n_frames, max_per_group)
    if strategy == "chunk":
        return split_chunk(n_frames, max_per_group)
    if strategy == "continuous":
        return split_continuous(n_frames, max_per_group)
    raise ValueError(f"unknown grouping strategy {strategy!r}; expected one of {STRATEGIES}")
