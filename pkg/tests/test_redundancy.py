import math
import os

import numpy as np
import pytest

from tokensieve import _kernels_py
from tokensieve.redundancy import HAVE_COMPILED_KERNEL, build_similarity, remove_redundant


def oracle_remove(S, relevance, times, target):
    """Naive re-simulation: full pair scan over the survivor set each step."""
    alive = list(range(S.shape[0]))
    while len(alive) > target:
        if len(alive) == 1:
            alive = []
            break
        best = None
        for a in range(len(alive)):
            for b in range(a + 1, len(alive)):
                i, j = alive[a], alive[b]
                if best is None or S[i, j] > best[0]:
                    best = (S[i, j], i, j)
        _, i, j = best
        if relevance[i] < relevance[j]:
            victim = i
        elif relevance[j] < relevance[i]:
            victim = j
        elif times[i] > times[j]:
            victim = i
        elif times[j] > times[i]:
            victim = j
        else:
            victim = j
        alive.remove(victim)
    return np.array(alive, dtype=np.int64)


def random_instance(rng, max_m=20, duplicate_rate=0.3):
    m = int(rng.integers(1, max_m + 1))
    feats = rng.standard_normal((m, 5))
    # Exact duplicates force similarity ties, stressing the tie-breaks.
    for i in range(1, m):
        if rng.random() < duplicate_rate:
            feats[i] = feats[int(rng.integers(i))]
    times = np.round(rng.random(m), 1)
    rel = np.round(rng.random(m), 1)
    sim = build_similarity(feats, times, sigma=0.3)
    target = int(rng.integers(0, m + 1))
    return sim, rel, times, target


class TestBuildSimilarity:
    def test_identical_tokens(self):
        feats = np.tile([1.0, 2.0, 0.5], (2, 1))
        sim = build_similarity(feats, np.zeros(2), 0.3)
        assert sim.combined[0, 1] == pytest.approx(2.0, abs=1e-12)

    def test_orthogonal_same_time(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        sim = build_similarity(feats, np.zeros(2), 0.3)
        assert sim.combined[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_temporal_decay_value(self):
        feats = np.tile([1.0, 1.0], (2, 1))
        sim = build_similarity(feats, np.array([0.0, 0.3]), 0.3)
        assert sim.temporal_part[0, 1] == pytest.approx(math.exp(-0.3), abs=1e-9)
        assert sim.combined[0, 1] == pytest.approx(1.0 + math.exp(-0.3), abs=1e-9)

    def test_zero_norm_feature_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            build_similarity(np.array([[0.0, 0.0], [1.0, 0.0]]), np.zeros(2), 0.3)

    def test_symmetric_and_bounded(self, rng):
        feats = rng.standard_normal((12, 6))
        times = rng.random(12)
        sim = build_similarity(feats, times, 0.3)
        np.testing.assert_allclose(sim.combined, sim.combined.T, atol=1e-6)
        assert np.all(sim.feature_part >= -1 - 1e-9) and np.all(sim.feature_part <= 1 + 1e-9)
        assert np.all(sim.temporal_part > 0) and np.all(sim.temporal_part <= 1 + 1e-12)
        np.testing.assert_allclose(sim.combined, sim.feature_part + sim.temporal_part, atol=0)

    def test_sigma_monotone(self, rng):
        feats = rng.standard_normal((6, 4))
        times = rng.random(6)
        narrow = build_similarity(feats, times, 0.2).temporal_part
        wide = build_similarity(feats, times, 0.5).temporal_part
        assert np.all(wide >= narrow - 1e-15)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            build_similarity(np.ones((2, 2)), np.zeros(2), 0.0)


class TestRemoveRedundant:
    def test_no_removal_is_identity(self, rng):
        sim, rel, times, _ = random_instance(rng)
        m = sim.size
        np.testing.assert_array_equal(remove_redundant(sim, rel, times, m), np.arange(m))

    def test_single_greedy_step(self):
        s = np.zeros((3, 3))
        s[0, 1] = s[1, 0] = 1.9
        s[0, 2] = s[2, 0] = 0.5
        s[1, 2] = s[2, 1] = 0.4
        kept = remove_redundant(s, np.array([0.9, 0.3, 0.5]), np.zeros(3), 2)
        np.testing.assert_array_equal(kept, [0, 2])

    def test_identical_tokens_keep_most_relevant(self):
        feats = np.tile([1.0, 1.0], (4, 1))
        sim = build_similarity(feats, np.zeros(4), 0.3)
        kept = remove_redundant(sim, np.array([4.0, 3.0, 2.0, 1.0]), np.zeros(4), 1)
        np.testing.assert_array_equal(kept, [0])

    def test_duplicate_suppression(self):
        # Two exact duplicates (feature and time) dominate the similarity
        # matrix; removing a single token must break the pair.
        feats = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.7]])
        times = np.array([0.2, 0.2, 0.8, 0.5])
        sim = build_similarity(feats, times, 0.3)
        rel = np.array([0.9, 0.1, 0.5, 0.6])
        kept = remove_redundant(sim, rel, times, 3)
        assert not {0, 1} <= set(kept.tolist())
        assert 0 in kept  # higher-relevance duplicate survives

    def test_time_tie_break(self):
        feats = np.tile([1.0, 0.0], (2, 1))
        times = np.array([0.1, 0.9])
        sim = build_similarity(feats, times, 10.0)
        kept = remove_redundant(sim, np.array([0.5, 0.5]), times, 1)
        np.testing.assert_array_equal(kept, [0])  # equal relevance: later token dies

    def test_index_tie_break(self):
        feats = np.tile([1.0, 0.0], (2, 1))
        times = np.zeros(2)
        sim = build_similarity(feats, times, 0.3)
        kept = remove_redundant(sim, np.array([0.5, 0.5]), times, 1)
        np.testing.assert_array_equal(kept, [0])

    def test_target_too_large(self):
        with pytest.raises(ValueError):
            remove_redundant(np.zeros((2, 2)), np.zeros(2), np.zeros(2), 3)

    def test_oracle_equivalence(self, rng):
        for _ in range(200):
            sim, rel, times, target = random_instance(rng)
            got = remove_redundant(sim, rel, times, target)
            expected = oracle_remove(np.asarray(sim.combined), rel, times, target)
            np.testing.assert_array_equal(got, expected)

    def test_python_and_compiled_agree(self, rng):
        for _ in range(100):
            sim, rel, times, target = random_instance(rng, max_m=30)
            s = np.ascontiguousarray(sim.combined)
            via_py = _kernels_py.greedy_remove(s, rel, times, target)
            via_active = remove_redundant(sim, rel, times, target)
            np.testing.assert_array_equal(via_py, via_active)

    @pytest.mark.skipif(bool(os.environ.get("TOKENSIEVE_PURE")), reason="fallback forced")
    def test_compiled_kernel_present(self):
        # The build ships the compiled kernel; the fallback is for
        # environments without a compiler (force with TOKENSIEVE_PURE=1).
        assert HAVE_COMPILED_KERNEL

    def test_deterministic(self, rng):
        sim, rel, times, target = random_instance(rng)
        a = remove_redundant(sim, rel, times, target)
        b = remove_redundant(sim, rel, times, target)
        np.testing.assert_array_equal(a, b)
