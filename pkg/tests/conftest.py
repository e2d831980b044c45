import numpy as np
import pytest

from tokensieve.synthetic import solve_peak_probability, two_level_distribution
from tokensieve.types import AttentionSource, GeneratedResponse, GroupTrace


def response_from_entropies(entropies, vocab_size=16, seed=0):
    """Response whose per-step entropies equal the given values exactly."""
    rng = np.random.default_rng(seed)
    rows = []
    for e in entropies:
        p = solve_peak_probability(e, vocab_size)
        rows.append(two_level_distribution(p, int(rng.integers(vocab_size)), vocab_size))
    probs = np.array(rows)
    return GeneratedResponse(probs=probs, chosen=np.argmax(probs, axis=1))


def random_response(rng, max_steps=40, vocab_size=8):
    steps = int(rng.integers(1, max_steps + 1))
    probs = rng.dirichlet(np.ones(vocab_size), size=steps)
    return GeneratedResponse(probs=probs, chosen=np.argmax(probs, axis=1))


def make_trace(
    group_id=0,
    frame_indices=(0, 1),
    tokens_per_frame=2,
    n_frames=4,
    feature_dim=8,
    heads=2,
    vocab_size=8,
    steps=3,
    queries=2,
    mode="qk",
    seed=0,
    answer_label=None,
):
    """A small well-formed GroupTrace for unit tests."""
    rng = np.random.default_rng(seed)
    frames = np.repeat(np.asarray(frame_indices, dtype=np.int64), tokens_per_frame)
    slots = np.tile(np.arange(tokens_per_frame, dtype=np.int32), len(frame_indices))
    times = frames / max(n_frames - 1, 1)
    v = len(frames)
    features = rng.standard_normal((v, feature_dim)).astype(np.float32)
    probs = rng.dirichlet(np.ones(vocab_size), size=steps).astype(np.float32)
    response = GeneratedResponse(probs=probs, chosen=np.argmax(probs, axis=1))
    if mode == "qk":
        attention = AttentionSource(
            heads=heads,
            queries=rng.standard_normal((queries, feature_dim)).astype(np.float32),
            keys=rng.standard_normal((v, feature_dim)).astype(np.float32),
        )
    else:
        logits = rng.standard_normal((heads, queries, v))
        t = np.exp(logits - logits.max(axis=2, keepdims=True))
        attention = AttentionSource(heads=heads, tensor=(t / t.sum(axis=2, keepdims=True)).astype(np.float32))
    return GroupTrace(
        group_id=group_id,
        frame_indices=tuple(frame_indices),
        token_features=features,
        token_times=times.astype(np.float32),
        token_slots=slots,
        token_frames=frames,
        response=response,
        attention=attention,
        answer_label=answer_label,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
