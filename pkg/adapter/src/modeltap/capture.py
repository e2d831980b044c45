"""Capture per-group model internals and emit engine trace bundles.

For each frame group the capturer runs one forward pass over
[visual tokens, prompt], taps the reference layer for its text-query /
visual-key tensors and visual hidden states, then greedily generates an
answer while recording the per-step probability rows. The result is a
trace whose arrays satisfy every engine invariant; bundles are written in
the engine's manifest + payload format.

Keys from grouped-query attention models are pre-expanded to the full
query-head count before emission, since the engine slices queries and keys
into the same number of contiguous head slices.

The capturer also keeps the encoded visual tokens so a selection produced
by the engine can be decoded: selected tokens are gathered in temporal
order with their original position ids and fed back through the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from tokensieve.traceio import BundleMeta, TraceBundle, write_trace_bundle
from tokensieve.types import (
    AttentionSource,
    GeneratedResponse,
    GroupTrace,
    SelectionResult,
    normalized_frame_time,
    validate_trace,
)

from .toy_model import SLOTS_PER_FRAME, TOKEN_ANSWERS, TinyVideoQA


class CaptureError(RuntimeError):
    pass


class CacheEvictionError(CaptureError):
    """A selected token no longer maps back to the visual-token cache."""


@dataclass
class TraceCapturer:
    """Taps one model; one instance accumulates the groups of one video."""

    model: TinyVideoQA
    layer_id: int
    n_frames: int
    response_steps: int = 4
    _cache: dict[tuple[int, int], tuple[torch.Tensor, int]] = field(default_factory=dict)
    _prompt_ids: list[int] | None = None

    def __post_init__(self):
        if not 0 <= self.layer_id < self.model.layer_count:
            raise CaptureError(
                f"layer {self.layer_id} not found; model has layers 0..{self.model.layer_count - 1}"
            )

    @property
    def visual_cache(self) -> dict[tuple[int, int], tuple[torch.Tensor, int]]:
        return self._cache

    def capture_group(
        self,
        group_id: int,
        frame_indices: list[int],
        frames: torch.Tensor,
        prompt_ids: list[int],
    ) -> GroupTrace:
        """Run the model on one frame group and record a full trace."""
        if frames.shape[0] != len(frame_indices):
            raise CaptureError(f"{frames.shape[0]} frames for {len(frame_indices)} frame indices")
        if self._prompt_ids is not None and prompt_ids != self._prompt_ids:
            raise CaptureError("all groups of one capture must share the prompt")
        self._prompt_ids = list(prompt_ids)

        model = self.model
        visual = torch.cat([model.encode_frame(f) for f in frames])
        token_frames = np.repeat(np.asarray(frame_indices, dtype=np.int64), SLOTS_PER_FRAME)
        token_slots = np.tile(np.arange(SLOTS_PER_FRAME, dtype=np.int32), len(frame_indices))
        positions = torch.tensor(
            [model.visual_position(int(f), int(s)) for f, s in zip(token_frames, token_slots)]
        )
        v_count = visual.shape[0]

        # Reference-layer pass: identical to the first generation step, so
        # certainty and relevance come from the same forward computation.
        prompt = torch.tensor(prompt_ids, dtype=torch.long)
        base = model.max_positions - len(prompt_ids) - self.response_steps - 1
        model.forward_sequence(visual, positions, prompt, base)
        block = model.blocks[self.layer_id]
        queries = block.attn.last_q[v_count:]  # text rows, (T, heads, head_dim)
        keys = block.attn.last_k[:v_count]  # visual rows, (V, kv_heads, head_dim)
        features = block.last_input[:v_count]

        group = model.heads // model.kv_heads
        keys = keys.repeat_interleave(group, dim=1)  # expand to full head count

        rows, chosen = model.generate(visual, positions, prompt_ids, self.response_steps)
        probs = torch.stack(rows).to(torch.float32).numpy()

        for idx in range(v_count):
            self._cache[(group_id, idx)] = (visual[idx].clone(), int(positions[idx]))

        times = np.array(
            [normalized_frame_time(int(f), self.n_frames) for f in token_frames], dtype=np.float32
        )
        return GroupTrace(
            group_id=group_id,
            frame_indices=tuple(int(f) for f in frame_indices),
            token_features=features.to(torch.float32).numpy(),
            token_times=times,
            token_slots=token_slots,
            token_frames=token_frames,
            response=GeneratedResponse(probs=probs, chosen=np.asarray(chosen, dtype=np.int32)),
            attention=AttentionSource(
                heads=model.heads,
                queries=queries.reshape(queries.shape[0], -1).to(torch.float32).numpy(),
                keys=keys.reshape(v_count, -1).to(torch.float32).numpy(),
            ),
            answer_label=TOKEN_ANSWERS.get(chosen[0], f"tok{chosen[0]}"),
        )

    def emit_bundle(self, traces: list[GroupTrace], path, max_per_group: int,
                    strategy: str = "marginal") -> TraceBundle:
        """Validate and write a bundle; refuses inconsistent or invalid traces."""
        if not traces:
            raise CaptureError("no traces to emit")
        dims = {t.feature_dim for t in traces}
        if len(dims) != 1:
            raise CaptureError(f"mismatched feature dims across groups: {sorted(dims)}")
        violations = [v for t in traces for v in validate_trace(t, self.n_frames)]
        if violations:
            raise CaptureError("captured trace violates invariants: " + "; ".join(violations))
        meta = BundleMeta(
            n_frames=self.n_frames,
            max_frames_per_group=max_per_group,
            strategy=strategy,
            vocab_size=traces[0].response.vocab_size,
            head_count=self.model.heads,
            feature_dim=traces[0].feature_dim,
            attention_mode="qk",
            attention_normalization="visual_only",
            attention_layer_id=f"block{self.layer_id}",
        )
        bundle = TraceBundle(meta=meta, traces=list(traces))
        write_trace_bundle(bundle, path)
        return bundle

    def _gather(self, pairs: list[tuple[int, int]]) -> tuple[torch.Tensor, torch.Tensor]:
        tokens, positions = [], []
        for key in pairs:
            if key not in self._cache:
                raise CacheEvictionError(
                    f"token {key} missing from the visual-token cache; re-capture before decoding"
                )
            emb, pos = self._cache[key]
            tokens.append(emb)
            positions.append(pos)
        return torch.stack(tokens), torch.tensor(positions)

    def decode_with_selection(self, selection: SelectionResult, prompt_ids: list[int]) -> str:
        """Final decoding pass over the selected tokens, positions preserved."""
        if not selection.selected:
            raise CaptureError("refusing to decode an empty selection")
        pairs = [(t.group_id, t.token_index) for t in selection.selected]
        visual, positions = self._gather(pairs)
        _, chosen = self.model.generate(visual, positions, prompt_ids, self.response_steps)
        return TOKEN_ANSWERS.get(chosen[0], f"tok{chosen[0]}")

    def decode_unpruned(self, prompt_ids: list[int]) -> str:
        """Baseline answer over every cached visual token, in position order."""
        if not self._cache:
            raise CaptureError("nothing captured yet")
        pairs = sorted(self._cache, key=lambda key: self._cache[key][1])
        visual, positions = self._gather(pairs)
        _, chosen = self.model.generate(visual, positions, prompt_ids, self.response_steps)
        return TOKEN_ANSWERS.get(chosen[0], f"tok{chosen[0]}")

    def evict(self, group_id: int) -> None:
        """Drop a group's tokens from the cache (tests the staleness guard)."""
        for key in [k for k in self._cache if k[0] == group_id]:
            del self._cache[key]
