"""Entropy-guided visual-token selection engine for long-video inference traces.

The engine consumes serialized per-group inference traces (response
probability rows, token features, cross-modal attention) and produces a
compact token selection: group certainty from response entropy, globally
informed budget allocation, per-group top-k by attention relevance,
location-aware redundancy removal, and optional certainty-triggered early
stopping.
"""

from .allocation import allocate_budgets, overselect_counts, select_top_tokens
from .certainty import (
    CertaintyScore,
    response_certainty,
    token_confidence,
    token_entropy,
    token_kl_uniform,
)
from .config import PipelineConfig, load_config, save_config
from .grouping import GroupingPlan, max_margin_order, split, split_chunk, split_continuous, split_marginal
from .pipeline import run_pipeline, vote
from .redundancy import HAVE_COMPILED_KERNEL, KERNEL_IMPL, build_similarity, remove_redundant
from .relevance import relevance_from_attention, relevance_from_qk
from .synthetic import gen_needle_bundle, gen_response, recall_of_planted
from .traceio import (
    BundleFormatError,
    BundleMeta,
    TraceBundle,
    read_selection_result,
    read_trace_bundle,
    write_selection_result,
    write_trace_bundle,
)
from .types import (
    AttentionSource,
    BudgetAllocation,
    GeneratedResponse,
    GroupTrace,
    ProbabilityDistribution,
    SelectionResult,
    TokenRecord,
    validate_trace,
)

__version__ = "0.1.0"
