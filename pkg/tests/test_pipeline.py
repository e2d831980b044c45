import numpy as np
import pytest

from tokensieve.certainty import CertaintyScore
from tokensieve.config import PipelineConfig, apply_overrides
from tokensieve.pipeline import resolve_budget, run_pipeline, vote
from tokensieve.synthetic import gen_needle_bundle
from tokensieve.traceio import write_selection_result


def needle_bundle_g8(seed=0, **kw):
    # Traversal for 8 groups is [0, 4, 2, 6, 1, 5, 3, 7]; plant needles in
    # the first three visited groups.
    args = dict(
        g_count=8, max_per_group=4, n_frames=32, needle_groups=[0, 4, 2],
        needle_tokens_per_group=4, snr=5.0, seed=seed, tokens_per_frame=4,
    )
    args.update(kw)
    return gen_needle_bundle(**args)


def config(budget=24, **over):
    return apply_overrides(PipelineConfig(), {"allocation.budget_tokens": budget, **over})


def result_bytes(result, tmp_path, name):
    path = tmp_path / name
    write_selection_result(result, path)
    return path.read_bytes()


class TestEarlyStopping:
    def test_stops_after_three_confident_groups(self):
        bundle = needle_bundle_g8()
        result = run_pipeline(bundle.traces, config(early_stopping=True))
        assert result.groups_processed == (0, 2, 4)
        assert result.stop_reason == "early_stop"

    def test_exhausts_without_early_stopping(self):
        bundle = needle_bundle_g8()
        result = run_pipeline(bundle.traces, config(early_stopping=False))
        assert result.groups_processed == tuple(range(8))
        assert result.stop_reason == "all_groups_processed"

    def test_budgets_cover_processed_groups_only(self):
        bundle = needle_bundle_g8()
        result = run_pipeline(bundle.traces, config(early_stopping=True))
        assert set(result.budgets) == {0, 2, 4}
        assert sum(result.budgets.values()) == result.budget_total

    def test_never_processes_more_than_full_traversal(self):
        bundle = needle_bundle_g8()
        with_stop = run_pipeline(bundle.traces, config(early_stopping=True))
        without = run_pipeline(bundle.traces, config(early_stopping=False))
        assert len(with_stop.groups_processed) <= len(without.groups_processed)

    def test_stop_monotonicity(self):
        bundle = needle_bundle_g8()
        processed = []
        for threshold in (0.75, 0.1):
            r = run_pipeline(bundle.traces, config(early_stopping=True, entropy_threshold=threshold))
            processed.append(len(r.groups_processed))
        assert processed[1] >= processed[0]  # stricter threshold processes more

        by_count = []
        for count in (1, 3, 8):
            r = run_pipeline(bundle.traces, config(early_stopping=True, group_threshold=count))
            by_count.append(len(r.groups_processed))
        assert by_count == sorted(by_count)

    def test_non_entropy_measure_still_stops_on_entropy(self):
        bundle = needle_bundle_g8()
        cfg = config(early_stopping=True, **{"certainty.measure": "confidence"})
        result = run_pipeline(bundle.traces, cfg)
        assert result.stop_reason == "early_stop"
        assert result.groups_processed == (0, 2, 4)


class TestSelectionContract:
    def test_single_group_degenerate(self):
        bundle = gen_needle_bundle(1, 4, 4, [], 0, 0.0, seed=3, tokens_per_frame=4)
        v = bundle.traces[0].token_count
        small = run_pipeline(bundle.traces, config(budget=5))
        assert len(small.selected) == 5
        big = run_pipeline(bundle.traces, config(budget=v + 50))
        assert len(big.selected) == v  # budget clamps to capacity

    def test_selected_count_equals_budget(self):
        bundle = needle_bundle_g8()
        for budget in (1, 7, 24, 64):
            result = run_pipeline(bundle.traces, config(budget=budget))
            assert len(result.selected) == budget

    def test_selection_sorted_and_unique(self):
        bundle = needle_bundle_g8()
        result = run_pipeline(bundle.traces, config())
        keys = [(t.frame_index, t.spatial_slot) for t in result.selected]
        assert keys == sorted(keys)
        pairs = [(t.group_id, t.token_index) for t in result.selected]
        assert len(set(pairs)) == len(pairs)

    def test_redundancy_disabled_skips_overselection(self):
        bundle = needle_bundle_g8()
        result = run_pipeline(bundle.traces, config(**{"redundancy.enabled": False}))
        assert result.overselected_total == result.budget_total == len(result.selected)

    def test_missing_group_rejected(self):
        bundle = needle_bundle_g8()
        with pytest.raises(ValueError, match="missing trace"):
            run_pipeline(bundle.traces[:3] + bundle.traces[4:], config())

    def test_chunk_strategy_uniform_budgets(self):
        bundle = gen_needle_bundle(
            4, 2, 8, [0], 2, 5.0, seed=5, tokens_per_frame=4, strategy="chunk",
        )
        result = run_pipeline(bundle.traces, config(budget=20), strategy="chunk")
        assert set(result.budgets.values()) == {5}

    def test_budget_frames_resolution(self):
        bundle = needle_bundle_g8()
        cfg = apply_overrides(PipelineConfig(), {"allocation.budget_frames": 2})
        assert resolve_budget(cfg, bundle.traces) == 2 * 4  # 4 tokens per frame

    def test_no_budget_configured(self):
        bundle = needle_bundle_g8()
        with pytest.raises(ValueError, match="no budget configured"):
            run_pipeline(bundle.traces, PipelineConfig())


class TestDeterminism:
    def test_identical_runs_identical_bytes(self, tmp_path):
        bundle = needle_bundle_g8()
        a = result_bytes(run_pipeline(bundle.traces, config()), tmp_path, "a.json")
        b = result_bytes(run_pipeline(bundle.traces, config()), tmp_path, "b.json")
        assert a == b

    def test_traversal_permutation_invariance(self, tmp_path):
        bundle = needle_bundle_g8()
        cfg = config(early_stopping=False)
        base = result_bytes(run_pipeline(bundle.traces, cfg), tmp_path, "base.json")
        rng = np.random.default_rng(0)
        for i in range(10):
            perm = list(rng.permutation(8))
            got = result_bytes(
                run_pipeline(bundle.traces, cfg, traversal=perm), tmp_path, f"p{i}.json"
            )
            assert got == base

    def test_bad_traversal_rejected(self):
        bundle = needle_bundle_g8()
        with pytest.raises(ValueError, match="permutation"):
            run_pipeline(bundle.traces, config(), traversal=[0, 0, 1, 2, 3, 4, 5, 6])


def score(value):
    return CertaintyScore(value=value, measure="entropy", mean_bottom_entropy=-value)


class TestVote:
    def test_unanimous(self):
        responses = [("B", score(-0.5)), ("B", score(-1.0)), ("B", score(-2.0))]
        for method in ("majority", "weighted", "borda"):
            assert vote(responses, method) == "B"

    def test_majority(self):
        responses = [("A", score(-0.1)), ("B", score(-1.0)), ("B", score(-2.0))]
        assert vote(responses, "majority") == "B"

    def test_borda_worked_example(self):
        # Ranks: A first, the two B groups second and third.
        # Scores: A -> 3^0.9 = 2.68788, B -> 2^0.9 + 1 = 2.86607, so B wins.
        responses = [("A", score(-0.1)), ("B", score(-0.5)), ("B", score(-0.9))]
        assert vote(responses, "borda", p=0.9) == "B"

    def test_borda_values(self):
        assert 3 ** 0.9 == pytest.approx(2.68787538, abs=1e-6)
        assert 2 ** 0.9 + 1.0 == pytest.approx(2.86606598, abs=1e-6)

    def test_weighted_certainty_dominates(self):
        responses = [("A", score(-0.1)), ("B", score(-5.0)), ("B", score(-5.0))]
        assert vote(responses, "weighted") == "A"
        assert vote(responses, "majority") == "B"

    def test_majority_tie_goes_to_most_certain(self):
        responses = [("A", score(-3.0)), ("B", score(-0.1))]
        assert vote(responses, "majority") == "B"

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            vote([], "majority")

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="method"):
            vote([("A", score(0.0))], "ranked_pairs")
