"""A tiny deterministic video question-answering model for adapter tests.

Randomly initialized, CPU-only, and seeded, so captures are reproducible
without downloading weights. The architecture mirrors the pieces the
adapter needs to tap: a patch-projection vision encoder, transformer blocks
whose per-head query/key tensors are observable, per-step next-token
probability rows during greedy generation, and position ids derived from
(frame index, spatial slot) so a reduced token set decodes with its
original positional information.

Attention heads are contiguous slices of the model dimension. Key/value
heads may be fewer than query heads (grouped-query attention); consumers
must expand keys to the full head count themselves.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

VOCAB_SIZE = 32
BOS_TOKEN = 0
ANSWER_TOKENS = {"A": 1, "B": 2, "C": 3, "D": 4}
TOKEN_ANSWERS = {v: k for k, v in ANSWER_TOKENS.items()}

FRAME_SIZE = 8  # frames are 3 x 8 x 8
PATCH = 4  # 4x4 patches -> 4 spatial slots per frame
SLOTS_PER_FRAME = (FRAME_SIZE // PATCH) ** 2


class Attention(nn.Module):
    def __init__(self, d_model: int, heads: int, kv_heads: int):
        super().__init__()
        if d_model % heads or heads % kv_heads:
            raise ValueError("d_model must split into heads, heads into kv groups")
        self.heads = heads
        self.kv_heads = kv_heads
        self.head_dim = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model, bias=False)
        self.k_proj = nn.Linear(d_model, kv_heads * self.head_dim, bias=False)
        self.v_proj = nn.Linear(d_model, kv_heads * self.head_dim, bias=False)
        self.out = nn.Linear(d_model, d_model, bias=False)
        self.last_q: torch.Tensor | None = None  # (S, heads, head_dim)
        self.last_k: torch.Tensor | None = None  # (S, kv_heads, head_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = x.shape[0]
        q = self.q_proj(x).view(s, self.heads, self.head_dim)
        k = self.k_proj(x).view(s, self.kv_heads, self.head_dim)
        v = self.v_proj(x).view(s, self.kv_heads, self.head_dim)
        self.last_q, self.last_k = q.detach(), k.detach()

        group = self.heads // self.kv_heads
        k_full = k.repeat_interleave(group, dim=1)
        v_full = v.repeat_interleave(group, dim=1)
        logits = torch.einsum("qhd,khd->hqk", q, k_full) / math.sqrt(self.head_dim)
        attn = torch.softmax(logits, dim=-1)
        mixed = torch.einsum("hqk,khd->qhd", attn, v_full)
        return self.out(mixed.reshape(s, -1))


class Block(nn.Module):
    def __init__(self, d_model: int, heads: int, kv_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = Attention(d_model, heads, kv_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 2 * d_model), nn.GELU(), nn.Linear(2 * d_model, d_model)
        )
        self.last_input: torch.Tensor | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.last_input = x.detach()
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class TinyVideoQA(nn.Module):
    """Greedy decoder over [visual tokens, prompt tokens, generated tokens]."""

    def __init__(
        self,
        d_model: int = 32,
        heads: int = 4,
        kv_heads: int = 4,
        layers: int = 2,
        max_positions: int = 4096,
        seed: int = 0,
    ):
        super().__init__()
        torch.manual_seed(seed)
        self.d_model = d_model
        self.heads = heads
        self.kv_heads = kv_heads
        self.patch_proj = nn.Linear(3 * PATCH * PATCH, d_model)
        self.token_embed = nn.Embedding(VOCAB_SIZE, d_model)
        self.pos_embed = nn.Embedding(max_positions, d_model)
        self.blocks = nn.ModuleList(Block(d_model, heads, kv_heads) for _ in range(layers))
        self.ln_out = nn.LayerNorm(d_model)
        self.lm_head = nn.Linear(d_model, VOCAB_SIZE, bias=False)
        self.max_positions = max_positions
        self.eval()

    @property
    def layer_count(self) -> int:
        return len(self.blocks)

    def encode_frame(self, frame: torch.Tensor) -> torch.Tensor:
        """One frame (3 x 8 x 8) -> (SLOTS_PER_FRAME, d_model) visual tokens."""
        if frame.shape != (3, FRAME_SIZE, FRAME_SIZE):
            raise ValueError(f"frame must be (3, {FRAME_SIZE}, {FRAME_SIZE}), got {tuple(frame.shape)}")
        patches = frame.unfold(1, PATCH, PATCH).unfold(2, PATCH, PATCH)
        patches = patches.permute(1, 2, 0, 3, 4).reshape(SLOTS_PER_FRAME, -1)
        return self.patch_proj(patches)

    def visual_position(self, frame_index: int, slot: int) -> int:
        return frame_index * SLOTS_PER_FRAME + slot

    @torch.no_grad()
    def forward_sequence(
        self,
        visual_tokens: torch.Tensor,
        visual_positions: torch.Tensor,
        text_ids: torch.Tensor,
        text_position_base: int,
    ) -> torch.Tensor:
        """Run all blocks over [visual, text]; returns logits at the last position."""
        text = self.token_embed(text_ids)
        positions = torch.cat(
            [visual_positions, text_position_base + torch.arange(text_ids.shape[0])]
        )
        if int(positions.max()) >= self.max_positions:
            raise ValueError("sequence exceeds the model's position table")
        x = torch.cat([visual_tokens, text]) + self.pos_embed(positions)
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_out(x[-1]))

    @torch.no_grad()
    def generate(
        self,
        visual_tokens: torch.Tensor,
        visual_positions: torch.Tensor,
        prompt_ids: list[int],
        steps: int = 4,
    ) -> tuple[list[torch.Tensor], list[int]]:
        """Greedy decoding; returns per-step probability rows and chosen ids."""
        text = list(prompt_ids)
        base = self.max_positions - len(prompt_ids) - steps - 1
        rows, chosen = [], []
        for _ in range(steps):
            logits = self.forward_sequence(
                visual_tokens, visual_positions, torch.tensor(text, dtype=torch.long), base
            )
            probs = torch.softmax(logits, dim=-1)
            token = int(torch.argmax(probs))
            rows.append(probs)
            chosen.append(token)
            text.append(token)
        return rows, chosen
