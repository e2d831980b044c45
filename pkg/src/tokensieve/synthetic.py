"""Controllable synthetic trace bundles, including planted-needle scenarios.

Responses are built from two-level distributions (one peak probability, the
rest uniform): their entropy is strictly monotone in the peak probability,
so a bisection solve calibrates any target entropy exactly. A needle bundle
plants low-entropy responses and high-attention tokens in chosen groups and
records the ground truth in the bundle manifest for recall scoring.

All randomness flows through the counter-based Philox generator with one
derived substream per group, so bundles are byte-identical across runs and
platforms for a fixed seed.
"""

from __future__ import annotations

import math

import numpy as np

from .grouping import split
from .traceio import BundleMeta, TraceBundle
from .types import (
    AttentionSource,
    GeneratedResponse,
    GroupTrace,
    SelectionResult,
    normalized_frame_time,
)

PRNG_ALGORITHM = "philox4x64"


def _rng(seed: int, *spawn_key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def two_level_entropy(p: float, vocab_size: int) -> float:
    """Entropy of the distribution with peak p and a uniform tail."""
    if p >= 1.0:
        return 0.0
    q = (1.0 - p) / (vocab_size - 1)
    tail = -(1.0 - p) * math.log(q) if q > 0 else 0.0
    head = -p * math.log(p) if p > 0 else 0.0
    return head + tail


def solve_peak_probability(target_entropy: float, vocab_size: int) -> float:
    """Peak probability whose two-level distribution has the target entropy."""
    if vocab_size < 2:
        raise ValueError(f"vocabulary size must be >= 2, got {vocab_size}")
    max_entropy = math.log(vocab_size)
    if not 0.0 <= target_entropy <= max_entropy:
        raise ValueError(
            f"target entropy {target_entropy} outside [0, ln {vocab_size} = {max_entropy:.6f}]"
        )
    lo, hi = 1.0 / vocab_size, 1.0  # entropy decreases from ln D to 0 on this range
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if two_level_entropy(mid, vocab_size) > target_entropy:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16:
            break
    return 0.5 * (lo + hi)


def two_level_distribution(p: float, peak_index: int, vocab_size: int) -> np.ndarray:
    probs = np.full(vocab_size, (1.0 - p) / (vocab_size - 1), dtype=np.float64)
    probs[peak_index] = p
    return probs


def gen_response(
    target_entropy: float,
    steps: int,
    vocab_size: int,
    rng: np.random.Generator | int,
) -> GeneratedResponse:
    """Response whose every step has the target entropy (within 1e-6).

    The emitted token at each step is the argmax of its distribution; peak
    positions vary randomly across steps.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if isinstance(rng, (int, np.integer)):
        rng = _rng(int(rng))
    p = solve_peak_probability(target_entropy, vocab_size)
    rows = np.empty((steps, vocab_size), dtype=np.float32)
    for s in range(steps):
        peak = int(rng.integers(vocab_size))
        rows[s] = two_level_distribution(p, peak, vocab_size).astype(np.float32)
    chosen = np.argmax(rows, axis=1).astype(np.int32)
    return GeneratedResponse(probs=rows, chosen=chosen)


def _spread_planted_indices(n_planted: int, n_group_frames: int, tokens_per_frame: int) -> list[int]:
    # One planted token per frame before doubling up, so planted tokens are
    # spread over the group's temporal extent.
    return sorted(
        (i % n_group_frames) * tokens_per_frame + (i // n_group_frames)
        for i in range(n_planted)
    )


def gen_needle_bundle(
    g_count: int,
    max_per_group: int,
    n_frames: int,
    needle_groups,
    needle_tokens_per_group,
    snr: float,
    seed: int,
    *,
    tokens_per_frame: int = 8,
    vocab_size: int = 32,
    response_steps: int = 8,
    query_count: int = 8,
    feature_dim: int = 64,
    heads: int = 4,
    needle_entropy: float = 0.2,
    background_entropy: float = 2.0,
    direction_weight: float = 1.0,
    strategy: str = "marginal",
    answer_options: tuple[str, ...] = ("A", "B", "C", "D"),
    correct_answer: str = "A",
    background_answer: str | None = None,
) -> TraceBundle:
    """Bundle with planted needle groups and ground truth in the manifest.

    Needle groups get low-entropy responses and planted tokens whose
    attention logits exceed the background by ``snr`` standard deviations;
    other groups get high-entropy responses and isotropic random features.
    ``needle_tokens_per_group`` is an int (same count everywhere) or a
    mapping group_id -> count.
    """
    plan = split(strategy, n_frames, max_per_group)
    if plan.group_count != g_count:
        raise ValueError(
            f"{g_count} groups inconsistent with {n_frames} frames at {max_per_group} per group "
            f"(grouping gives {plan.group_count})"
        )
    needle_set = {int(g) for g in needle_groups}
    bad = sorted(g for g in needle_set if not 0 <= g < g_count)
    if bad:
        raise ValueError(f"needle group(s) {bad} outside [0, {g_count})")
    if isinstance(needle_tokens_per_group, dict):
        planted_counts = {int(g): int(c) for g, c in needle_tokens_per_group.items()}
        if set(planted_counts) != needle_set:
            raise ValueError("needle_tokens_per_group mapping must cover exactly the needle groups")
    else:
        planted_counts = {g: int(needle_tokens_per_group) for g in needle_set}
    if snr < 0:
        raise ValueError(f"snr must be >= 0, got {snr}")

    head_dim = feature_dim // heads
    if head_dim * heads != feature_dim:
        raise ValueError(f"feature dim {feature_dim} not divisible by {heads} heads")

    root = _rng(seed)
    shared_dir = root.standard_normal(feature_dim)
    shared_dir /= np.linalg.norm(shared_dir)

    traces = []
    planted_truth: dict[str, list[int]] = {}
    for gid in range(g_count):
        rng = _rng(seed, gid)
        frames = plan.groups[gid]
        v_count = len(frames) * tokens_per_frame
        token_frames = np.repeat(np.asarray(frames, dtype=np.int64), tokens_per_frame)
        token_slots = np.tile(np.arange(tokens_per_frame, dtype=np.int32), len(frames))
        times = np.array([normalized_frame_time(int(f), n_frames) for f in token_frames])

        features = rng.standard_normal((v_count, feature_dim))
        queries = rng.standard_normal((query_count, feature_dim))
        keys = rng.standard_normal((v_count, feature_dim))

        is_needle = gid in needle_set
        if is_needle:
            n_planted = planted_counts[gid]
            if n_planted > v_count:
                raise ValueError(f"group {gid}: {n_planted} planted tokens exceed {v_count} tokens")
            planted = _spread_planted_indices(n_planted, len(frames), tokens_per_frame)
            planted_truth[str(gid)] = planted

            noise = rng.standard_normal((n_planted, feature_dim))
            features[planted] = direction_weight * math.sqrt(feature_dim) * shared_dir + noise

            # Background logit scale, pooled over heads, for calibrating snr.
            bg_logits = []
            for h in range(heads):
                sl = slice(h * head_dim, (h + 1) * head_dim)
                bg_logits.append((queries[:, sl] @ keys[:, sl].T) / math.sqrt(head_dim))
            bg = np.stack(bg_logits)
            spread = float(bg.std())
            for rank, v in enumerate(planted):
                q = queries[rank % query_count]
                align = float(np.mean([
                    q[h * head_dim:(h + 1) * head_dim] @ q[h * head_dim:(h + 1) * head_dim]
                    for h in range(heads)
                ])) / math.sqrt(head_dim)
                scale = snr * spread / align
                keys[v] = scale * q + rng.standard_normal(feature_dim)
            response = gen_response(needle_entropy, response_steps, vocab_size, rng)
            label = correct_answer
        else:
            response = gen_response(background_entropy, response_steps, vocab_size, rng)
            if background_answer is not None:
                label = background_answer
            else:
                wrong = [a for a in answer_options if a != correct_answer]
                label = wrong[int(rng.integers(len(wrong)))] if wrong else correct_answer

        traces.append(
            GroupTrace(
                group_id=gid,
                frame_indices=frames,
                token_features=features.astype(np.float32),
                token_times=times.astype(np.float32),
                token_slots=token_slots,
                token_frames=token_frames,
                response=response,
                attention=AttentionSource(
                    heads=heads,
                    queries=queries.astype(np.float32),
                    keys=keys.astype(np.float32),
                ),
                answer_label=label,
            )
        )

    scenario = {
        "kind": "planted_needle",
        "needle_groups": sorted(needle_set),
        "planted": planted_truth,
        "snr": snr,
        "seed": seed,
        "needle_entropy": needle_entropy,
        "background_entropy": background_entropy,
        "correct_answer": correct_answer,
    }
    meta = BundleMeta(
        n_frames=n_frames,
        max_frames_per_group=max_per_group,
        strategy=strategy,
        vocab_size=vocab_size,
        head_count=heads,
        feature_dim=feature_dim,
        attention_mode="qk",
        attention_normalization="visual_only",
        attention_layer_id="synthetic",
        prng=f"{PRNG_ALGORITHM}:seed={seed}",
        scenario=scenario,
    )
    return TraceBundle(meta=meta, traces=traces)


def recall_of_planted(result: SelectionResult, scenario: dict) -> float:
    """Fraction of planted tokens present in the selection."""
    if not scenario or "planted" not in scenario:
        raise ValueError("bundle carries no planted-token ground truth")
    planted = {
        (int(g), int(i)) for g, idxs in scenario["planted"].items() for i in idxs
    }
    if not planted:
        raise ValueError("scenario lists no planted tokens")
    selected = {(t.group_id, t.token_index) for t in result.selected}
    return len(planted & selected) / len(planted)
