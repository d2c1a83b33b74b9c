"""ViT-lite image encoder: patchify + L pre-norm transformer blocks.

Stands in for a full-scale ViT backbone; plain global self-attention, no
multi-scale features.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import torch
import torch.nn as nn

from .nn_core import TransformerBlock, reset_linear_, seeded_generator


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 8
    d: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_mult: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.patch_size, self.d, self.num_heads, self.ffn_mult) <= 0:
            raise ValueError("encoder config fields must be positive")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.d % self.num_heads != 0:
            raise ValueError("d must be divisible by num_heads")


@dataclass(frozen=True)
class ImageSample:
    """An H x W x C float image in [0, 1] plus its identifier."""

    pixels: torch.Tensor
    image_id: int = 0


@dataclass(frozen=True)
class PatchGrid:
    """n x d patch tokens laid out row-major over a grid_h x grid_w grid."""

    tokens: torch.Tensor
    grid_h: int
    grid_w: int


@lru_cache(maxsize=32)
def sinusoidal_positions(grid_h: int, grid_w: int, d: int) -> torch.Tensor:
    """Fixed 2-D sin/cos positional codes, (grid_h * grid_w) x d. Cached;
    callers must treat the returned tensor as read-only."""
    half = d // 2
    ys = torch.arange(grid_h, dtype=torch.float32).repeat_interleave(grid_w)
    xs = torch.arange(grid_w, dtype=torch.float32).repeat(grid_h)
    out = torch.zeros(grid_h * grid_w, d)
    for offset, coord in ((0, ys), (half, xs)):
        dim = half if offset == 0 else d - half
        freqs = torch.exp(
            torch.arange(0, dim, 2, dtype=torch.float32) * (-torch.log(torch.tensor(10000.0)) / max(dim, 1))
        )
        angles = coord[:, None] * freqs[None, :]
        out[:, offset : offset + dim : 2] = torch.sin(angles)
        out[:, offset + 1 : offset + dim : 2] = torch.cos(angles)[:, : (dim - dim // 2)]
    return out


def extract_patches(pixels: torch.Tensor, patch_size: int) -> tuple[torch.Tensor, int, int]:
    """Flatten an (optionally batched) H x W x C image into row-major patches of
    width patch_size^2 * C."""
    batched = pixels.dim() == 4
    h, w = pixels.shape[-3], pixels.shape[-2]
    c = pixels.shape[-1]
    if h % patch_size or w % patch_size:
        raise ValueError(f"image dims {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    lead = (pixels.shape[0],) if batched else ()
    x = pixels.reshape(*lead, gh, patch_size, gw, patch_size, c)
    x = x.movedim(-3, -4).reshape(*lead, gh * gw, patch_size * patch_size * c)
    return x, gh, gw


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, in_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        gen = seeded_generator(cfg.seed)
        self.patch_proj = reset_linear_(
            nn.Linear(cfg.patch_size * cfg.patch_size * in_channels, cfg.d), gen
        )
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d, cfg.num_heads, cfg.ffn_mult, gen) for _ in range(cfg.num_layers)
        )

    def patchify(self, image: ImageSample, add_positions: bool = True) -> PatchGrid:
        """Project non-overlapping patches to width d and add positional codes."""
        flat, gh, gw = extract_patches(image.pixels, self.cfg.patch_size)
        tokens = self.patch_proj(flat)
        if add_positions:
            tokens = tokens + sinusoidal_positions(gh, gw, self.cfg.d)
        return PatchGrid(tokens, gh, gw)

    def encode(self, patches: PatchGrid) -> PatchGrid:
        """Run the patch tokens through the transformer blocks; shape-preserving."""
        x = patches.tokens
        if x.shape[-1] != self.cfg.d:
            raise ValueError(f"token width {x.shape[-1]} != d {self.cfg.d}")
        for block in self.blocks:
            x = block(x)
        return PatchGrid(x, patches.grid_h, patches.grid_w)

    def encode_batch(self, pixels: torch.Tensor) -> torch.Tensor:
        """Batched variant for training: (B, H, W, C) pixels -> (B, n, d) tokens."""
        flat, gh, gw = extract_patches(pixels, self.cfg.patch_size)
        x = self.patch_proj(flat) + sinusoidal_positions(gh, gw, self.cfg.d)
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, image: ImageSample) -> PatchGrid:
        return self.encode(self.patchify(image))
