"""Prompt-guided transformer decoder.

Class prompts (projected CLIP-style embeddings) are prepended to the decoder
self-attention at every layer; only the object-query positions survive, so the
number of object queries stays constant no matter how many classes are
prompted. A conditional-matching decoder (one query copy per class) is kept as
the cost baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .encoder import PatchGrid
from .nn_core import (
    MLP,
    FeedForward,
    MultiHeadAttention,
    reset_linear_,
    seeded_generator,
)


@dataclass(frozen=True)
class PromptSet:
    """k projected class embeddings with their vocabulary indices."""

    embeddings: torch.Tensor
    class_ids: list[int]
    modalities: list[str] = field(default_factory=list)

    def __post_init__(self):
        k = self.embeddings.shape[0]
        if k < 1:
            raise ValueError("prompt set must contain at least one prompt")
        if len(self.class_ids) != k:
            raise ValueError("class_ids length must match number of prompt rows")
        if len(set(self.class_ids)) != k:
            raise ValueError("class_ids must be distinct")

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class DetectionOutput:
    """m boxes (normalized cxcywh), m x k per-class probabilities, m embeddings.

    Probabilities are independent per class (multi-label sigmoid), not a
    distribution over the k prompted classes.
    """

    boxes: torch.Tensor
    probs: torch.Tensor
    object_embeddings: torch.Tensor


@dataclass(frozen=True)
class ConditionalOutput:
    """Baseline decoder output: one box and one binary score per (class, query)."""

    boxes: torch.Tensor  # (k, m, 4)
    scores: torch.Tensor  # (k, m)
    object_embeddings: torch.Tensor  # (k, m, d)


@dataclass(frozen=True)
class DecoderConfig:
    m: int = 25
    d: int = 64
    num_layers: int = 3
    num_heads: int = 4
    ffn_mult: int = 4
    mode: str = "prompt"
    seed: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.mode not in ("prompt", "conditional"):
            raise ValueError(f"unknown decoder mode {self.mode!r}")
        if self.d % self.num_heads != 0:
            raise ValueError("d must be divisible by num_heads")


def project_prompts(
    raw_clip_embeddings: torch.Tensor,
    proj: nn.Linear,
    class_ids: list[int],
    modalities: list[str] | None = None,
) -> PromptSet:
    """Map raw CLIP-width embeddings (k x d') to decoder-width prompts (k x d)."""
    if raw_clip_embeddings.shape[-1] != proj.in_features:
        raise ValueError(
            f"prompt width {raw_clip_embeddings.shape[-1]} != projection input {proj.in_features}"
        )
    return PromptSet(proj(raw_clip_embeddings), list(class_ids), list(modalities or []))


class DecoderLayer(nn.Module):
    """Pre-norm self-attention / cross-attention / FFN, DETR-style."""

    def __init__(self, d: int, num_heads: int, ffn_mult: int, gen: torch.Generator):
        super().__init__()
        self.norm_self = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, num_heads, gen)
        self.norm_cross_q = nn.LayerNorm(d)
        self.norm_cross_kv = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, num_heads, gen)
        self.norm_ffn = nn.LayerNorm(d)
        self.ffn = FeedForward(d, d * ffn_mult, gen)

    def forward(self, queries: torch.Tensor, prompts: torch.Tensor | None, memory: torch.Tensor) -> torch.Tensor:
        m = queries.shape[-2]
        if prompts is None:
            seq = queries
        else:
            seq = torch.cat([prompts.expand(*queries.shape[:-2], -1, -1), queries], dim=-2)
        h = self.norm_self(seq)
        # Only the m query positions are kept after self-attention; the prompt
        # rows exist solely as keys/values for the queries.
        attn_out = self.self_attn(h[..., -m:, :], h)
        x = queries + attn_out
        x = x + self.cross_attn(self.norm_cross_q(x), self.norm_cross_kv(memory))
        x = x + self.ffn(self.norm_ffn(x))
        return x


class Decoder(nn.Module):
    """Transformer decoder with class prompts and multi-label classification head."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        gen = seeded_generator(cfg.seed)
        self.query_embed = nn.Parameter(torch.empty(cfg.m, cfg.d).uniform_(-1.0, 1.0, generator=gen))
        self.layers = nn.ModuleList(
            DecoderLayer(cfg.d, cfg.num_heads, cfg.ffn_mult, gen) for _ in range(cfg.num_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d)
        self.box_head = MLP([cfg.d, cfg.d, cfg.d, 4], gen)
        # Classification: scaled inner product between a projection of the
        # object embedding and each prompt, squashed per class by a sigmoid.
        self.cls_proj = reset_linear_(nn.Linear(cfg.d, cfg.d), gen)
        self.cls_scale = nn.Parameter(torch.tensor(1.0 / cfg.d**0.5))
        # Binary objectness head for the conditional baseline.
        self.binary_head = reset_linear_(nn.Linear(cfg.d, 1), gen)

    def classification_head(self, object_embeddings: torch.Tensor, prompts: PromptSet) -> torch.Tensor:
        """Per-class probabilities, (m x k); each entry an independent sigmoid."""
        if object_embeddings.shape[-1] != prompts.embeddings.shape[-1]:
            raise ValueError("object embedding width != prompt width")
        logits = self.cls_scale * (self.cls_proj(object_embeddings) @ prompts.embeddings.transpose(-2, -1))
        return torch.sigmoid(logits)

    def decode_prompt(self, prompts: PromptSet, memory: PatchGrid) -> DetectionOutput:
        if prompts.embeddings.shape[-1] != self.cfg.d:
            raise ValueError(f"prompt width {prompts.embeddings.shape[-1]} != d {self.cfg.d}")
        if memory.tokens.shape[-1] != self.cfg.d:
            raise ValueError(f"memory width {memory.tokens.shape[-1]} != d {self.cfg.d}")
        x = self.query_embed
        if memory.tokens.dim() == 3:  # batched memory from training
            x = x.expand(memory.tokens.shape[0], -1, -1)
        for layer in self.layers:
            # Prompts are re-prepended fresh at every layer.
            x = layer(x, prompts.embeddings, memory.tokens)
        obj = self.final_norm(x)
        boxes = torch.sigmoid(self.box_head(obj))
        probs = self.classification_head(obj, prompts)
        return DetectionOutput(boxes=boxes, probs=probs, object_embeddings=obj)

    def decode_conditional(self, prompts: PromptSet, memory: PatchGrid) -> ConditionalOutput:
        """OV-DETR-style baseline: k copies of the m queries, each shifted by its
        class embedding, decoded as k independent groups with binary scores."""
        if prompts.embeddings.shape[-1] != self.cfg.d:
            raise ValueError(f"prompt width {prompts.embeddings.shape[-1]} != d {self.cfg.d}")
        k = prompts.k
        # (k, m, d): query + prompt, elementwise.
        x = self.query_embed.unsqueeze(0) + prompts.embeddings.unsqueeze(1)
        mem = memory.tokens.unsqueeze(0).expand(k, -1, -1)
        for layer in self.layers:
            x = layer(x, None, mem)
        obj = self.final_norm(x)
        boxes = torch.sigmoid(self.box_head(obj))
        scores = torch.sigmoid(self.binary_head(obj)).squeeze(-1)
        return ConditionalOutput(boxes=boxes, scores=scores, object_embeddings=obj)

    def forward(self, prompts: PromptSet, memory: PatchGrid):
        if self.cfg.mode == "prompt":
            return self.decode_prompt(prompts, memory)
        return self.decode_conditional(prompts, memory)
