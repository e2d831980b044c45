"""Bit-exact serialization of trace bundles and selection results.

A bundle is a directory holding two files:

* ``manifest.json`` -- human-readable metadata: format version, video and
  grouping parameters, array shapes, and per-group byte offsets into the
  payload. Optional fields carry per-group answer labels and synthetic
  ground truth (``scenario``).
* ``payload.bin``   -- little-endian binary arrays, concatenated in manifest
  order. Per group: response probability rows (steps x D, float32), token
  features (V x d, float32), normalized times (V, float32), spatial slots
  (V, int32), then either an attention tensor (H x T x V, float32) or
  queries (T x d) plus keys (V x d).

Reading validates the format version, every offset and length, and all
trace invariants before returning; NaN/Inf in probability arrays is an
error, never a silent pass-through.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import (
    AttentionSource,
    GeneratedResponse,
    GroupTrace,
    SelectedToken,
    SelectionResult,
    validate_trace,
)

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "payload.bin"

_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


class BundleFormatError(ValueError):
    """Malformed bundle or result file."""


@dataclass(frozen=True)
class BundleMeta:
    """Bundle-level metadata mirrored into the manifest."""

    n_frames: int
    max_frames_per_group: int
    strategy: str
    vocab_size: int
    head_count: int
    feature_dim: int
    attention_mode: str  # "tensor" | "qk"
    attention_normalization: str = "visual_only"
    attention_layer_id: str = ""
    prng: str | None = None
    scenario: dict | None = None


@dataclass(frozen=True)
class TraceBundle:
    meta: BundleMeta
    traces: list[GroupTrace] = field(default_factory=list)

    @property
    def group_count(self) -> int:
        return len(self.traces)


def _group_arrays(trace: GroupTrace) -> list[tuple[str, np.ndarray]]:
    arrays = [
        ("response_probs", np.ascontiguousarray(trace.response.probs, dtype=_F32)),
        ("token_features", np.ascontiguousarray(trace.token_features, dtype=_F32)),
        ("token_times", np.ascontiguousarray(trace.token_times, dtype=_F32)),
        ("token_slots", np.ascontiguousarray(trace.token_slots, dtype=_I32)),
    ]
    att = trace.attention
    if att.mode == "tensor":
        arrays.append(("attention_tensor", np.ascontiguousarray(att.tensor, dtype=_F32)))
    else:
        arrays.append(("queries", np.ascontiguousarray(att.queries, dtype=_F32)))
        arrays.append(("keys", np.ascontiguousarray(att.keys, dtype=_F32)))
    return arrays


def write_trace_bundle(bundle: TraceBundle, path: str | Path) -> None:
    """Write manifest + payload; writing then reading round-trips bit-exactly.

    Responses are stored as probability rows only; chosen tokens are
    reconstructed as row argmaxes on read (traces record greedy decoding).
    """
    meta = bundle.meta
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    groups = []
    chunks: list[bytes] = []
    offset = 0
    for trace in bundle.traces:
        offsets = {}
        for name, arr in _group_arrays(trace):
            raw = arr.tobytes()
            offsets[name] = [offset, len(raw)]
            chunks.append(raw)
            offset += len(raw)
        groups.append(
            {
                "group_id": trace.group_id,
                "frame_indices": list(trace.frame_indices),
                "token_count": trace.token_count,
                "query_count": trace.attention.query_count,
                "response_length": len(trace.response),
                "answer_label": trace.answer_label,
                "offsets": offsets,
            }
        )

    manifest = {
        "format_version": FORMAT_VERSION,
        "n_frames": meta.n_frames,
        "max_frames_per_group": meta.max_frames_per_group,
        "grouping_strategy": meta.strategy,
        "group_count": len(bundle.traces),
        "vocab_size": meta.vocab_size,
        "head_count": meta.head_count,
        "feature_dim": meta.feature_dim,
        "attention": {
            "mode": meta.attention_mode,
            "normalization": meta.attention_normalization,
            "layer_id": meta.attention_layer_id,
        },
        "prng": meta.prng,
        "scenario": meta.scenario,
        "groups": groups,
    }
    (root / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _expected_shapes(entry: dict, manifest: dict) -> dict[str, tuple[tuple[int, ...], np.dtype]]:
    v = entry["token_count"]
    t = entry["query_count"]
    s = entry["response_length"]
    d = manifest["feature_dim"]
    vocab = manifest["vocab_size"]
    h = manifest["head_count"]
    shapes = {
        "response_probs": ((s, vocab), _F32),
        "token_features": ((v, d), _F32),
        "token_times": ((v,), _F32),
        "token_slots": ((v,), _I32),
    }
    if manifest["attention"]["mode"] == "tensor":
        shapes["attention_tensor"] = ((h, t, v), _F32)
    else:
        shapes["queries"] = ((t, d), _F32)
        shapes["keys"] = ((v, d), _F32)
    return shapes


def _read_manifest(root: Path) -> dict:
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise BundleFormatError(f"no manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"manifest {mpath} is not valid JSON: {e}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleFormatError(
            f"unsupported format_version {version!r}, expected {FORMAT_VERSION}"
        )
    required = (
        "n_frames", "max_frames_per_group", "grouping_strategy", "group_count",
        "vocab_size", "head_count", "feature_dim", "attention", "groups",
    )
    missing = [k for k in required if k not in manifest]
    if missing:
        raise BundleFormatError(f"manifest missing field(s) {missing}")
    if len(manifest["groups"]) != manifest["group_count"]:
        raise BundleFormatError(
            f"manifest declares {manifest['group_count']} groups, lists {len(manifest['groups'])}"
        )
    return manifest


def read_trace_bundle(path: str | Path) -> TraceBundle:
    """Load and fully validate a bundle; raises BundleFormatError on any defect."""
    root = Path(path)
    if not root.exists():
        raise BundleFormatError(f"no bundle at {root}")
    manifest = _read_manifest(root)
    payload_path = root / PAYLOAD_NAME
    if not payload_path.is_file():
        raise BundleFormatError(f"no payload at {payload_path}")
    payload = payload_path.read_bytes()

    n_frames = manifest["n_frames"]
    heads = manifest["head_count"]
    mode = manifest["attention"]["mode"]
    if mode not in ("tensor", "qk"):
        raise BundleFormatError(f"unknown attention mode {mode!r}")

    # Validate every offset against the payload before touching any array.
    group_required = (
        "group_id", "frame_indices", "token_count", "query_count", "response_length", "offsets",
    )
    for pos, entry in enumerate(manifest["groups"]):
        missing = [k for k in group_required if k not in entry]
        if missing:
            raise BundleFormatError(f"manifest group entry #{pos} missing field(s) {missing}")
    for entry in manifest["groups"]:
        gid = entry["group_id"]
        shapes = _expected_shapes(entry, manifest)
        for name, (shape, dtype) in shapes.items():
            if name not in entry["offsets"]:
                raise BundleFormatError(f"group[{gid}]: missing offsets for {name}")
            off, nbytes = entry["offsets"][name]
            expected = int(np.prod(shape)) * dtype.itemsize
            if nbytes != expected:
                raise BundleFormatError(
                    f"group[{gid}].{name}: {nbytes} bytes recorded, expected {expected} "
                    f"for shape {shape}"
                )
            if off < 0 or off + nbytes > len(payload):
                raise BundleFormatError(
                    f"group[{gid}].{name}: range [{off}, {off + nbytes}) exceeds "
                    f"payload size {len(payload)} (truncated payload?)"
                )

    traces = []
    for entry in manifest["groups"]:
        gid = entry["group_id"]
        shapes = _expected_shapes(entry, manifest)

        def load(name: str) -> np.ndarray:
            shape, dtype = shapes[name]
            off, nbytes = entry["offsets"][name]
            return np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape)

        probs = load("response_probs")
        if not np.all(np.isfinite(probs)):
            raise BundleFormatError(f"group[{gid}].response_probs: contains NaN or Inf")
        times = load("token_times")
        frames = np.rint(times.astype(np.float64) * max(n_frames - 1, 0)).astype(np.int64)

        if mode == "tensor":
            attention = AttentionSource(heads=heads, tensor=load("attention_tensor"))
        else:
            attention = AttentionSource(heads=heads, queries=load("queries"), keys=load("keys"))

        trace = GroupTrace(
            group_id=gid,
            frame_indices=tuple(entry["frame_indices"]),
            token_features=load("token_features"),
            token_times=times,
            token_slots=load("token_slots"),
            token_frames=frames,
            response=GeneratedResponse(probs=probs, chosen=_chosen_from_probs(probs)),
            attention=attention,
            answer_label=entry.get("answer_label"),
        )
        violations = validate_trace(trace, n_frames=n_frames)
        if violations:
            raise BundleFormatError("; ".join(violations))
        traces.append(trace)

    meta = BundleMeta(
        n_frames=n_frames,
        max_frames_per_group=manifest["max_frames_per_group"],
        strategy=manifest["grouping_strategy"],
        vocab_size=manifest["vocab_size"],
        head_count=heads,
        feature_dim=manifest["feature_dim"],
        attention_mode=mode,
        attention_normalization=manifest["attention"].get("normalization", "visual_only"),
        attention_layer_id=manifest["attention"].get("layer_id", ""),
        prng=manifest.get("prng"),
        scenario=manifest.get("scenario"),
    )
    return TraceBundle(meta=meta, traces=traces)


def _chosen_from_probs(probs: np.ndarray) -> np.ndarray:
    # Greedy decoding: the emitted token is the argmax of each row.
    return np.argmax(probs, axis=1).astype(np.int32)


def write_selection_result(result: SelectionResult, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "metadata": {
            "budgets": {str(g): b for g, b in sorted(result.budgets.items())},
            "groups_processed": list(result.groups_processed),
            "stop_reason": result.stop_reason,
            "budget_total": result.budget_total,
            "requested_budget": result.requested_budget,
            "overselected_total": result.overselected_total,
        },
        "selected": [
            {
                "group_id": t.group_id,
                "token_index": t.token_index,
                "frame_index": t.frame_index,
                "spatial_slot": t.spatial_slot,
                "normalized_time": t.normalized_time,
                "relevance": t.relevance,
            }
            for t in result.selected
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_selection_result(path: str | Path) -> SelectionResult:
    p = Path(path)
    if not p.is_file():
        raise BundleFormatError(f"no selection result at {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"selection result {p} is not valid JSON: {e}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleFormatError(f"unsupported format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        meta = doc["metadata"]
        selected = tuple(
            SelectedToken(
                group_id=int(row["group_id"]),
                token_index=int(row["token_index"]),
                frame_index=int(row["frame_index"]),
                spatial_slot=int(row["spatial_slot"]),
                normalized_time=float(row["normalized_time"]),
                relevance=float(row["relevance"]),
            )
            for row in doc["selected"]
        )
        return SelectionResult(
            selected=selected,
            budgets={int(g): int(b) for g, b in meta["budgets"].items()},
            groups_processed=tuple(meta["groups_processed"]),
            stop_reason=meta["stop_reason"],
            budget_total=int(meta["budget_total"]),
            requested_budget=int(meta["requested_budget"]),
            overselected_total=int(meta["overselected_total"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise BundleFormatError(f"malformed selection result {p}: {e}") from None
