"""Dual-encoder CLIP stand-in.

The image side is a small ViT with a class token; the text side composes one
embedding per attribute word ("red triangle" -> normalize(u_red + v_triangle)),
which gives novel attribute combinations genuine zero-shot structure after
contrastive pretraining.

The RoI-scoring path extracts one embedding per RoI from a single forward pass
by masking the class token's attention to the patches outside each RoI.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoder import ImageSample, extract_patches, sinusoidal_positions
from .nn_core import SOFT_PENALTY, TransformerBlock, reset_linear_, seeded_generator


@dataclass(frozen=True)
class ClipConfig:
    input_size: int = 32
    patch_size: int = 4
    d_prime: int = 64
    num_layers: int = 5
    num_heads: int = 4
    ffn_mult: int = 4
    masked_attention_layer_index: int | None = None  # None -> last layer
    temperature: float = 0.01
    penalty: float = SOFT_PENALTY
    seed: int = 2

    def __post_init__(self):
        j = self.masked_attention_layer_index
        if j is not None and not (1 <= j <= self.num_layers):
            raise ValueError(f"masked_attention_layer_index {j} outside [1, {self.num_layers}]")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    @property
    def mask_layer(self) -> int:
        return self.masked_attention_layer_index or self.num_layers


@dataclass(frozen=True)
class RoIMaskSet:
    """m additive attention masks over the h x w patch grid: 0 inside, penalty outside."""

    masks: torch.Tensor  # (m, grid_h * grid_w)
    penalty: float
    grid_h: int
    grid_w: int


def build_roi_masks(
    boxes: torch.Tensor, grid_h: int, grid_w: int, penalty: float = SOFT_PENALTY
) -> RoIMaskSet:
    """Rasterize normalized cxcywh boxes into per-RoI attention masks.

    A cell is visible (0) iff its rectangle has strictly positive intersection
    area with the box. Degenerate boxes clamp to the single cell containing the
    box center.
    """
    if boxes.numel() == 0:
        raise ValueError("need at least one box to build RoI masks")
    boxes = boxes.reshape(-1, 4)
    cx, cy, w, h = boxes.unbind(-1)
    x1 = (cx - w / 2).clamp(0.0, 1.0)
    x2 = (cx + w / 2).clamp(0.0, 1.0)
    y1 = (cy - h / 2).clamp(0.0, 1.0)
    y2 = (cy + h / 2).clamp(0.0, 1.0)

    cols = torch.arange(grid_w, dtype=boxes.dtype)
    rows = torch.arange(grid_h, dtype=boxes.dtype)
    # Strict overlap with cell [c/gw, (c+1)/gw) x [r/gh, (r+1)/gh).
    col_hit = (x1[:, None] < (cols + 1) / grid_w) & (x2[:, None] > cols / grid_w)
    row_hit = (y1[:, None] < (rows + 1) / grid_h) & (y2[:, None] > rows / grid_h)
    visible = row_hit[:, :, None] & col_hit[:, None, :]

    degenerate = (x2 <= x1) | (y2 <= y1)
    if degenerate.any():
        cc = (cx.clamp(0.0, 1.0) * grid_w).long().clamp(0, grid_w - 1)
        cr = (cy.clamp(0.0, 1.0) * grid_h).long().clamp(0, grid_h - 1)
        for i in torch.nonzero(degenerate).flatten().tolist():
            visible[i] = False
            visible[i, cr[i], cc[i]] = True

    masks = torch.where(visible, 0.0, penalty).reshape(boxes.shape[0], grid_h * grid_w)
    return RoIMaskSet(masks=masks, penalty=penalty, grid_h=grid_h, grid_w=grid_w)


class TextComposer(nn.Module):
    """Compositional text encoder: one learned vector per attribute word."""

    def __init__(self, words: list[str], d_prime: int, generator: torch.Generator):
        super().__init__()
        self.word_index = {w: i for i, w in enumerate(words)}
        self.word_embed = nn.Parameter(
            torch.empty(len(words), d_prime).uniform_(-1.0, 1.0, generator=generator)
        )

    def forward(self, class_name: str) -> torch.Tensor:
        parts = class_name.split()
        unknown = [p for p in parts if p not in self.word_index]
        if unknown or not parts:
            raise ValueError(f"unknown words {unknown} in class name {class_name!r}")
        vec = self.word_embed[[self.word_index[p] for p in parts]].sum(dim=0)
        return vec / vec.norm().clamp_min(1e-12)


class ClipModel(nn.Module):
    """ViT image encoder with class token + compositional text encoder."""

    def __init__(self, cfg: ClipConfig, words: list[str], in_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        gen = seeded_generator(cfg.seed)
        self.patch_proj = reset_linear_(
            nn.Linear(cfg.patch_size * cfg.patch_size * in_channels, cfg.d_prime), gen
        )
        self.cls_token = nn.Parameter(torch.empty(1, cfg.d_prime).uniform_(-1.0, 1.0, generator=gen))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d_prime, cfg.num_heads, cfg.ffn_mult, gen)
            for _ in range(cfg.num_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d_prime)
        self.out_proj = reset_linear_(nn.Linear(cfg.d_prime, cfg.d_prime), gen)
        self.text = TextComposer(words, cfg.d_prime, gen)
        # Learnable contrastive temperature (used only during pretraining).
        self.logit_scale = nn.Parameter(torch.tensor(2.0))

    def _embed_tokens(self, image: ImageSample) -> tuple[torch.Tensor, int, int]:
        flat, gh, gw = extract_patches(image.pixels, self.cfg.patch_size)
        patches = self.patch_proj(flat) + sinusoidal_positions(gh, gw, self.cfg.d_prime)
        return torch.cat([self.cls_token, patches], dim=0), gh, gw

    def _project(self, cls_out: torch.Tensor) -> torch.Tensor:
        e = self.out_proj(self.final_norm(cls_out))
        return e / e.norm(dim=-1, keepdim=True).clamp_min(1e-12)

    def encode_image(self, image: ImageSample) -> torch.Tensor:
        """Unit-norm embedding of the whole image (class-token output)."""
        x, _, _ = self._embed_tokens(image)
        for block in self.blocks:
            x = block(x)
        return self._project(x[0])

    def encode_image_batch(self, pixels: torch.Tensor) -> torch.Tensor:
        """Batched whole-image embeddings: (B, H, W, C) -> (B, d'), unit-norm rows."""
        flat, gh, gw = extract_patches(pixels, self.cfg.patch_size)
        patches = self.patch_proj(flat) + sinusoidal_positions(gh, gw, self.cfg.d_prime)
        x = torch.cat([self.cls_token.expand(pixels.shape[0], -1, -1), patches], dim=1)
        for block in self.blocks:
            x = block(x)
        return self._project(x[:, 0])

    def encode_text(self, class_name: str) -> torch.Tensor:
        return self.text(class_name)

    def encode_patch_grid(self, image: ImageSample) -> tuple[torch.Tensor, int, int]:
        """Unit-norm projected embeddings of every patch position after the full
        unmasked forward pass: (grid_h * grid_w, d'), plus the grid shape."""
        x, gh, gw = self._embed_tokens(image)
        for block in self.blocks:
            x = block(x)
        return self._project(x[1:]), gh, gw

    def encode_image_rois(
        self,
        image: ImageSample,
        boxes: torch.Tensor,
        penalty: float | None = None,
    ) -> torch.Tensor:
        """One unit-norm embedding per RoI from a single shared forward pass.

        Layers before the masked layer are shared by all RoIs. At the masked
        layer the class-token query attends to all tokens under each RoI mask
        (the class-token key itself is never masked). Any later layers update
        the m per-RoI class tokens unmasked against the shared patch stream.
        """
        if boxes.numel() == 0:
            raise ValueError("need at least one box")
        boxes = boxes.reshape(-1, 4)
        if penalty is None:
            penalty = self.cfg.penalty
        x, gh, gw = self._embed_tokens(image)
        j = self.cfg.mask_layer

        for block in self.blocks[: j - 1]:
            x = block(x)

        mask_set = build_roi_masks(boxes, gh, gw, penalty)
        m = mask_set.masks.shape[0]
        # Class-token key position (index 0) stays visible for every RoI.
        mask = torch.cat([torch.zeros(m, 1), mask_set.masks], dim=1)  # (m, n+1)

        block = self.blocks[j - 1]
        h = block.norm1(x)
        # One attention call with m query rows (the class token replicated once
        # per RoI) over the shared keys, so keys/values are projected once.
        cls = x[0] + block.attn(h[:1].expand(m, -1), h, mask)  # (m, d')
        cls = cls + block.ffn(block.norm2(cls))
        if j < self.cfg.num_layers:
            x = block(x)  # shared stream passes the masked layer unmasked

        for block in self.blocks[j:]:
            # Shared patch stream continues unmasked (with the original class
            # token); each RoI's class token rides along as an extra query.
            h = block.norm1(x)
            hc = block.norm1(cls).unsqueeze(1)  # (m, 1, d')
            kv = torch.cat([hc, h[1:].unsqueeze(0).expand(m, -1, -1)], dim=1)
            new_cls = cls + block.attn(hc, kv).squeeze(1)
            cls = new_cls + block.ffn(block.norm2(new_cls))
            x = block(x)

        return self._project(cls)

    def naive_crop_embed(self, image: ImageSample, box: torch.Tensor) -> torch.Tensor:
        """Crop the RoI, nearest-neighbor resize to the CLIP input size, encode."""
        h, w = image.pixels.shape[0], image.pixels.shape[1]
        cx, cy, bw, bh = box.flatten().tolist()
        x1 = max(0, min(w - 1, int((cx - bw / 2) * w)))
        y1 = max(0, min(h - 1, int((cy - bh / 2) * h)))
        x2 = max(x1 + 1, min(w, round((cx + bw / 2) * w)))
        y2 = max(y1 + 1, min(h, round((cy + bh / 2) * h)))
        crop = image.pixels[y1:y2, x1:x2]
        s = self.cfg.input_size
        yi = ((torch.arange(s) + 0.5) * (y2 - y1) / s).long().clamp(0, y2 - y1 - 1)
        xi = ((torch.arange(s) + 0.5) * (x2 - x1) / s).long().clamp(0, x2 - x1 - 1)
        resized = crop[yi][:, xi]
        return self.encode_image(ImageSample(resized, image.image_id))


def clip_probs(
    roi_embeddings: torch.Tensor, text_embeddings: torch.Tensor, tau: float
) -> torch.Tensor:
    """Softmax over cosine similarities divided by the temperature; rows sum to 1."""
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    if roi_embeddings.shape[-1] != text_embeddings.shape[-1]:
        raise ValueError("embedding widths differ")
    cos = roi_embeddings @ text_embeddings.transpose(-2, -1)
    return torch.softmax(cos / tau, dim=-1)
