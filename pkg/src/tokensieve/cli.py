"""Command-line surface.

Subcommands:

* ``select``   -- run the selection pipeline on a bundle, write a result file
* ``simulate`` -- generate a planted-needle synthetic bundle
* ``entropy``  -- per-group certainty table for a bundle
* ``order``    -- print the max-margin traversal for G groups
* ``ablate``   -- run a config grid over bundles and print a metric table
* ``voting``   -- compare answer-voting baselines on labeled bundles

Summaries are key=value lines or tab-separated tables so other tools can
parse them without scraping. Flags mirror config keys; with ``--config``
the file supplies defaults and flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .certainty import MEASURES, response_certainty
from .config import ConfigError, PipelineConfig, apply_overrides, load_config
from .grouping import STRATEGIES, max_margin_order
from .pipeline import run_pipeline
from .synthetic import gen_needle_bundle
from .traceio import (
    BundleFormatError,
    read_trace_bundle,
    write_selection_result,
    write_trace_bundle,
)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _int_list(text: str) -> list[int]:
    text = text.strip()
    return [int(part) for part in text.split(",")] if text else []


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file; flags override it")
    p.add_argument("--budget-tokens", type=int, dest="allocation.budget_tokens")
    p.add_argument("--budget-frames", type=int, dest="allocation.budget_frames")
    p.add_argument("--tau", type=float, dest="allocation.tau")
    p.add_argument("--overselect-rate", type=float, dest="allocation.overselect_rate")
    p.add_argument("--sigma", type=float, dest="redundancy.sigma")
    p.add_argument("--no-redundancy", action="store_false", default=None, dest="redundancy.enabled")
    p.add_argument("--measure", choices=MEASURES, dest="certainty.measure")
    p.add_argument("--bottom-fraction", type=float, dest="certainty.bottom_fraction")
    p.add_argument("--early-stop", action="store_true", default=None, dest="early_stopping")
    p.add_argument("--no-early-stop", action="store_false", default=None, dest="early_stopping")
    p.add_argument("--entropy-threshold", type=float, dest="entropy_threshold")
    p.add_argument("--group-threshold", type=int, dest="group_threshold")
    p.add_argument("--strategy", choices=STRATEGIES, dest="grouping.strategy")


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {
        key: value
        for key, value in vars(args).items()
        if ("." in key or key in ("entropy_threshold", "group_threshold", "early_stopping"))
        and value is not None
    }
    # A budget flag supersedes the other budget form from the config file.
    if "allocation.budget_tokens" in overrides and "allocation.budget_frames" not in overrides:
        overrides["allocation.budget_frames"] = None
    if "allocation.budget_frames" in overrides and "allocation.budget_tokens" not in overrides:
        overrides["allocation.budget_tokens"] = None
    return apply_overrides(config, overrides)


def cmd_select(args) -> int:
    config = _build_config(args)
    bundle = read_trace_bundle(args.bundle)
    strategy = vars(args).get("grouping.strategy") or bundle.meta.strategy
    result = run_pipeline(bundle.traces, config, strategy=strategy)
    write_selection_result(result, args.out)
    print(f"groups_processed={len(result.groups_processed)}")
    print(f"stop_reason={result.stop_reason}")
    print(f"requested_budget={result.requested_budget}")
    print(f"budget_total={result.budget_total}")
    print(f"overselected_total={result.overselected_total}")
    print(f"selected_tokens={len(result.selected)}")
    for gid in sorted(result.budgets):
        print(f"budget[{gid}]={result.budgets[gid]}")
    print(f"result={args.out}")
    return 0


def cmd_simulate(args) -> int:
    needles = args.needles
    if args.needle_tokens_list is not None:
        counts = args.needle_tokens_list
        if len(counts) != len(needles):
            raise ValueError(
                f"--needle-tokens-list has {len(counts)} entries for {len(needles)} needle groups"
            )
        per_group = dict(zip(needles, counts))
    else:
        per_group = args.needle_tokens
    bundle = gen_needle_bundle(
        g_count=args.groups,
        max_per_group=args.group_size,
        n_frames=args.frames,
        needle_groups=needles,
        needle_tokens_per_group=per_group,
        snr=args.snr,
        seed=args.seed,
        tokens_per_frame=args.tokens_per_frame,
        vocab_size=args.vocab_size,
        response_steps=args.response_steps,
        query_count=args.query_count,
        feature_dim=args.feature_dim,
        heads=args.heads,
        needle_entropy=args.needle_entropy,
        background_entropy=args.background_entropy,
        direction_weight=args.direction_weight,
        strategy=args.strategy,
        background_answer=args.background_answer,
        correct_answer=args.correct_answer,
    )
    write_trace_bundle(bundle, args.out)
    planted = bundle.meta.scenario["planted"]
    print(f"bundle={args.out}")
    print(f"groups={bundle.group_count}")
    print(f"needle_groups={','.join(str(g) for g in bundle.meta.scenario['needle_groups'])}")
    print(f"planted_total={sum(len(v) for v in planted.values())}")
    print(f"seed={args.seed}")
    return 0


def cmd_entropy(args) -> int:
    bundle = read_trace_bundle(args.bundle)
    rows = []
    for trace in bundle.traces:
        score = response_certainty(trace.response, args.measure, args.bottom_fraction)
        entropy_score = (
            score
            if args.measure == "entropy"
            else response_certainty(trace.response, "entropy", args.bottom_fraction)
        )
        rows.append(
            {
                "group_id": trace.group_id,
                "measure": args.measure,
                "value": score.value,
                "mean_bottom_entropy": entropy_score.mean_bottom_entropy,
            }
        )
    table = bench.render_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_order(args) -> int:
    print(" ".join(str(g) for g in max_margin_order(args.groups)))
    return 0


def cmd_ablate(args) -> int:
    config = _build_config(args)
    grid = bench.load_grid(args.grid) if args.grid else {}
    rows = bench.run_ablation(grid, args.bundle, args.metric, config)
    table = bench.render_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    return 0


def cmd_voting(args) -> int:
    config = _build_config(args)
    rows = bench.compare_voting(args.bundle, config)
    table = bench.render_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokensieve", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="run token selection on a trace bundle")
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="generate a planted-needle bundle")
    p.add_argument("--groups", required=True, type=_positive_int)
    p.add_argument("--frames", required=True, type=_positive_int)
    p.add_argument("--group-size", required=True, type=_positive_int, help="max frames per group")
    p.add_argument("--needles", required=True, type=_int_list, help="comma-separated needle group ids")
    p.add_argument("--needle-tokens", type=int, default=4, help="planted tokens per needle group")
    p.add_argument("--needle-tokens-list", type=_int_list, default=None,
                   help="per-needle-group planted counts, aligned with --needles")
    p.add_argument("--snr", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--tokens-per-frame", type=_positive_int, default=8)
    p.add_argument("--vocab-size", type=_positive_int, default=32)
    p.add_argument("--response-steps", type=_positive_int, default=8)
    p.add_argument("--query-count", type=_positive_int, default=8)
    p.add_argument("--feature-dim", type=_positive_int, default=64)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--needle-entropy", type=float, default=0.2)
    p.add_argument("--background-entropy", type=float, default=2.0)
    p.add_argument("--direction-weight", type=float, default=1.0)
    p.add_argument("--strategy", choices=STRATEGIES, default="marginal")
    p.add_argument("--background-answer", default=None)
    p.add_argument("--correct-answer", default="A")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("entropy", help="per-group certainty table")
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--measure", choices=MEASURES, default="entropy")
    p.add_argument("--bottom-fraction", type=float, default=0.10)
    p.add_argument("--out", type=Path, help="also write the table as JSON")
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("order", help="print the max-margin group traversal")
    p.add_argument("--groups", required=True, type=_positive_int)
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("ablate", help="run a config grid over bundles")
    p.add_argument("--bundle", required=True, action="append", type=Path)
    p.add_argument("--grid", type=Path, help="JSON file mapping config keys to value lists")
    p.add_argument("--metric", choices=bench.METRICS, default="recall")
    p.add_argument("--out", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("voting", help="compare voting baselines on labeled bundles")
    p.add_argument("--bundle", required=True, action="append", type=Path)
    p.add_argument("--out", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_voting)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BundleFormatError, ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
