"""Ablation and comparison harness over synthetic bundles.

Runs the pipeline across a cartesian grid of config overrides and reports a
metric per (configuration, bundle) cell, plus wall-clock time. Also compares
the answer-voting baselines against pipeline selection recall on bundles
that carry answer labels and ground truth.

Grid files are JSON objects mapping dotted config keys to value lists, e.g.
``{"allocation.overselect_rate": [0.05, 0.1, 0.2, 0.3]}``. Keys combined
with ``+`` vary together instead of in product, one value tuple per cell:
``{"entropy_threshold+group_threshold": [[0.75, 3], [0.8, 4]]}``.
"""

from __future__ import annotations

import itertools
import json
import time
from pathlib import Path
from typing import Any, Mapping, Sequence

from .certainty import response_certainty
from .config import ConfigError, PipelineConfig, apply_overrides, config_keys
from .pipeline import run_pipeline, vote
from .synthetic import recall_of_planted
from .traceio import TraceBundle, read_trace_bundle

METRICS = ("recall", "processed_groups", "runtime")
VOTE_METHODS = ("majority", "weighted", "borda")

# Additive component presets: per-chunk local selection, globally allocated
# budgets over marginal groups, then redundancy removal on top of that.
COMPONENT_GRID = {
    "grouping.strategy+redundancy.enabled": [
        ["chunk", False],
        ["marginal", False],
        ["marginal", True],
    ]
}


def _as_bundle(item) -> tuple[str, TraceBundle]:
    if isinstance(item, TraceBundle):
        return (f"bundle{id(item) % 10000}", item)
    return (str(item), read_trace_bundle(item))


def load_grid(path: str | Path) -> dict[str, list]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read grid file {path}: {e}") from None
    if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
        raise ConfigError("grid file must map config keys to value lists")
    return data


def run_ablation(
    grid: Mapping[str, Sequence[Any]],
    bundles: Sequence,
    metric: str,
    base_config: PipelineConfig | None = None,
) -> list[dict]:
    """One row per grid cell x bundle; an empty grid yields the baseline row."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    valid = set(config_keys())
    unknown = [k for part in grid for k in part.split("+") if k not in valid]
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(set(unknown))}")

    base = base_config or PipelineConfig()
    keys = list(grid)
    cells = list(itertools.product(*(grid[k] for k in keys))) or [()]
    loaded = [_as_bundle(b) for b in bundles]

    rows = []
    for cell in cells:
        overrides: dict[str, Any] = {}
        for key, value in zip(keys, cell):
            subkeys = key.split("+")
            if len(subkeys) == 1:
                overrides[key] = value
            else:
                if len(value) != len(subkeys):
                    raise ConfigError(f"grid key {key!r} needs {len(subkeys)} values per cell")
                overrides.update(zip(subkeys, value))
        cfg = apply_overrides(base, overrides)
        # A strategy override switches the downstream semantics (traversal,
        # budget sharing); otherwise the bundle's recorded strategy rules.
        strategy = overrides.get("grouping.strategy")
        for name, bundle in loaded:
            start = time.perf_counter()
            result = run_pipeline(bundle.traces, cfg, strategy=strategy or bundle.meta.strategy)
            wall = time.perf_counter() - start
            row = {**overrides, "bundle": name}
            if metric == "recall":
                row["recall"] = recall_of_planted(result, bundle.meta.scenario)
            # Groups processed and wall time are reported on every row: the
            # former tracks the dominant cost, the latter actual time.
            row["processed_groups"] = len(result.groups_processed)
            row["wall_seconds"] = wall
            if metric == "runtime":
                row["runtime"] = wall
            rows.append(row)
    return rows


def compare_voting(bundles: Sequence, config: PipelineConfig | None = None) -> list[dict]:
    """Accuracy of each voting method, plus mean pipeline selection recall."""
    cfg = config or PipelineConfig()
    loaded = [_as_bundle(b) for b in bundles]
    if not loaded:
        raise ValueError("need at least one bundle")

    correct = {m: 0 for m in VOTE_METHODS}
    recalls = []
    for name, bundle in loaded:
        scenario = bundle.meta.scenario or {}
        truth = scenario.get("correct_answer")
        if truth is None:
            raise ValueError(f"{name}: bundle carries no ground-truth answer")
        responses = []
        for trace in bundle.traces:
            if trace.answer_label is None:
                raise ValueError(f"{name}: group {trace.group_id} has no answer label")
            score = response_certainty(
                trace.response, cfg.certainty.measure, cfg.certainty.bottom_fraction
            )
            responses.append((trace.answer_label, score))
        for method in VOTE_METHODS:
            if vote(responses, method) == truth:
                correct[method] += 1
        if scenario.get("planted") and cfg.allocation.budget_tokens is not None:
            result = run_pipeline(bundle.traces, cfg, strategy=bundle.meta.strategy)
            recalls.append(recall_of_planted(result, scenario))

    n = len(loaded)
    rows = [{"method": m, "accuracy": correct[m] / n} for m in VOTE_METHODS]
    if recalls:
        rows.append({"method": "selection_recall", "accuracy": sum(recalls) / len(recalls)})
    return rows


def render_table(rows: list[dict]) -> str:
    """Rows as tab-separated text with a header line."""
    if not rows:
        return ""
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(_fmt(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)
