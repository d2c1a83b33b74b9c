"""Minimal dense-numerics layer: masked softmax, layer norm, multi-head attention.

Everything operates on plain 2-D float tensors (rows = tokens). Modules are
read-only after construction; all randomness comes from an explicit generator
owned by the caller.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

# Additive attention-mask penalties. SOFT_PENALTY is the working default for
# RoI masks; HARD_PENALTY makes masked keys numerically unreachable and is the
# value used by equivalence oracles.
SOFT_PENALTY = -100.0
HARD_PENALTY = -1e9

LN_EPS = 1e-5


def seeded_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def reset_linear_(layer: nn.Linear, generator: torch.Generator) -> nn.Linear:
    """Re-initialize a linear layer to uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=generator)
    return layer


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Row-wise softmax with an optional additive mask.

    The mask (0 for visible entries, a negative penalty otherwise) is added to
    the logits before exponentiation.
    """
    if mask is not None:
        if mask.shape != logits.shape:
            raise ValueError(f"mask shape {tuple(mask.shape)} != logits shape {tuple(logits.shape)}")
        logits = logits + mask
    return torch.softmax(logits, dim=-1)


def layer_norm(tokens: torch.Tensor, gain: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Per-row normalization to mean 0 / variance 1, then affine gain and shift."""
    if tokens.shape[-1] == 0:
        raise ValueError("cannot layer-normalize zero-width rows")
    if gain.shape[-1] != tokens.shape[-1] or shift.shape[-1] != tokens.shape[-1]:
        raise ValueError("gain/shift length must equal token width")
    mean = tokens.mean(dim=-1, keepdim=True)
    var = tokens.var(dim=-1, unbiased=False, keepdim=True)
    return (tokens - mean) / torch.sqrt(var + LN_EPS) * gain + shift


class MultiHeadAttention(nn.Module):
    """Multi-head attention between a query token set and a key/value token set.

    Logits are scaled by 1/sqrt(head_dim) first; the additive mask (if any) is
    applied after scaling, so a HARD_PENALTY entry removes a key exactly.
    """

    def __init__(self, dim: int, num_heads: int, generator: torch.Generator):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.w_q = reset_linear_(nn.Linear(dim, dim), generator)
        self.w_k = reset_linear_(nn.Linear(dim, dim), generator)
        self.w_v = reset_linear_(nn.Linear(dim, dim), generator)
        self.w_out = reset_linear_(nn.Linear(dim, dim), generator)

    def forward(
        self,
        q_tokens: torch.Tensor,
        kv_tokens: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Attend q_tokens (..., nq, d) over kv_tokens (..., nk, d).

        mask, if given, must broadcast against (..., nq, nk); it is shared
        across heads.
        """
        if q_tokens.shape[-1] != self.dim or kv_tokens.shape[-1] != self.dim:
            raise ValueError(
                f"token width mismatch: got {q_tokens.shape[-1]}/{kv_tokens.shape[-1]}, want {self.dim}"
            )
        nq, nk = q_tokens.shape[-2], kv_tokens.shape[-2]
        batch = q_tokens.shape[:-2]

        def split(x, n):
            return x.reshape(*batch, n, self.num_heads, self.head_dim).transpose(-3, -2)

        q = split(self.w_q(q_tokens), nq)
        k = split(self.w_k(kv_tokens), nk)
        v = split(self.w_v(kv_tokens), nk)

        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            logits = logits + mask.unsqueeze(-3)
        attn = torch.softmax(logits, dim=-1)
        out = (attn @ v).transpose(-3, -2).reshape(*batch, nq, self.dim)
        return self.w_out(out)


class FeedForward(nn.Module):
    """Two-layer FFN with GELU, the transformer-block companion to attention."""

    def __init__(self, dim: int, hidden_dim: int, generator: torch.Generator):
        super().__init__()
        self.fc1 = reset_linear_(nn.Linear(dim, hidden_dim), generator)
        self.fc2 = reset_linear_(nn.Linear(hidden_dim, dim), generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, num_heads: int, ffn_mult: int, generator: torch.Generator):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.attn = MultiHeadAttention(dim, num_heads, generator)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.ffn = FeedForward(dim, dim * ffn_mult, generator)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        x = x + self.ffn(self.norm2(x))
        return x


class MLP(nn.Module):
    """Stack of linear layers with ReLU between them (DETR-style head)."""

    def __init__(self, dims: list[int], generator: torch.Generator):
        super().__init__()
        self.layers = nn.ModuleList(
            reset_linear_(nn.Linear(a, b), generator) for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.relu(x)
        return x
