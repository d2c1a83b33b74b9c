"""Training loops: contrastive pretraining of the CLIP stand-in and
Hungarian-matched end-to-end training of the detector on base classes."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .clip import ClipModel
from .datagen import DatasetManifest, load_image, make_scene, render_class_crop, render_scene
from .encoder import ImageSample
from .decoder import project_prompts
from .encoder import PatchGrid
from .losses import GroundTruthSet, LossWeights, total_loss
from .pipeline import OpenVocabDetector, Vocabulary


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 10000
    crops_per_class: int = 160
    holdout_per_class: int = 8
    lr: float = 1e-3
    noise: float = 0.02
    # Region alignment: multi-object scenes whose ground-truth boxes are pushed
    # through the RoI-masked image path, so region embeddings (not just
    # whole-crop embeddings) land next to their class texts.
    region_scenes: int = 2000
    region_canvas: int = 64
    region_weight: float = 1.0
    patch_weight: float = 1.0  # dense per-patch text alignment on the same scenes
    warmup_fraction: float = 0.2  # crops-only fraction before region terms kick in
    seed: int = 10


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 8
    optimizer: str = "adamw"  # "sgd" (momentum 0.9) or "adamw"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    cosine_decay: bool = True
    augment: bool = True  # random dihedral (rot90 + flip) transforms per sample
    neg_prompts: int = 8  # absent base classes sampled per batch
    grad_clip: float = 1.0
    checkpoint_every: int = 1000
    log_every: int = 25
    seed: int = 11

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def make_crop_dataset(
    vocab: Vocabulary, per_class: int, size: int, seed: int, noise: float = 0.02
) -> tuple[torch.Tensor, list[int]]:
    """Render per_class single-object crops for every class (base and novel)."""
    crops, labels = [], []
    for c, name in enumerate(vocab.classes):
        for i in range(per_class):
            arr = render_class_crop(name, size, seed * 100003 + c * 1009 + i, noise)
            crops.append(torch.from_numpy(arr))
            labels.append(c)
    return torch.stack(crops), labels


def contrastive_loss(model: ClipModel, pixels: torch.Tensor, class_names: list[str]) -> torch.Tensor:
    """Symmetric InfoNCE over a batch with one crop per (distinct) class."""
    img = model.encode_image_batch(pixels)
    txt = torch.stack([model.encode_text(n) for n in class_names])
    scale = model.logit_scale.exp().clamp(max=100.0)
    logits = scale * img @ txt.t()
    targets = torch.arange(len(class_names))
    return 0.5 * (
        torch.nn.functional.cross_entropy(logits, targets)
        + torch.nn.functional.cross_entropy(logits.t(), targets)
    )


def make_scene_pool(
    vocab: Vocabulary, count: int, canvas: int, seed: int, noise: float = 0.02
) -> list[tuple[torch.Tensor, torch.Tensor, list[int]]]:
    """Render multi-object scenes for region alignment: (pixels, boxes, labels)."""
    class_index = {name: i for i, name in enumerate(vocab.classes)}
    pool = []
    for i in range(count):
        spec = make_scene(canvas, vocab.classes, (1, 3), noise, seed * 31 + i)
        pixels = torch.from_numpy(render_scene(spec))
        boxes = torch.tensor([box for _, box, _ in spec.objects], dtype=torch.float32)
        labels = [class_index[cls] for cls, _, _ in spec.objects]
        pool.append((pixels, boxes, labels))
    return pool


def region_alignment_loss(
    model: ClipModel, pixels: torch.Tensor, boxes: torch.Tensor, labels: list[int],
    class_names: list[str],
) -> torch.Tensor:
    """Cross entropy of RoI-masked region embeddings against all class texts."""
    emb = model.encode_image_rois(ImageSample(pixels), boxes)
    txt = torch.stack([model.encode_text(n) for n in class_names])
    scale = model.logit_scale.exp().clamp(max=100.0)
    return torch.nn.functional.cross_entropy(scale * emb @ txt.t(), torch.tensor(labels))


def patch_alignment_loss(
    model: ClipModel, pixels: torch.Tensor, boxes: torch.Tensor, labels: list[int],
    class_names: list[str],
) -> torch.Tensor:
    """Cross entropy of per-patch embeddings against class texts, for every
    patch whose center falls inside a ground-truth box. Dense supervision that
    keeps final-layer patch features locally classifiable (the RoI-masked class
    token can only be as good as the patches it pools)."""
    emb, gh, gw = model.encode_patch_grid(ImageSample(pixels))
    cy = (torch.arange(gh, dtype=torch.float32) + 0.5) / gh
    cx = (torch.arange(gw, dtype=torch.float32) + 0.5) / gw
    centers_y = cy.repeat_interleave(gw)
    centers_x = cx.repeat(gh)
    patch_idx, patch_labels = [], []
    for box, label in zip(boxes, labels):
        bx, by, bw, bh = (float(v) for v in box)
        inside = (
            (centers_x >= bx - bw / 2) & (centers_x <= bx + bw / 2)
            & (centers_y >= by - bh / 2) & (centers_y <= by + bh / 2)
        )
        for i in torch.nonzero(inside).flatten().tolist():
            patch_idx.append(i)
            patch_labels.append(label)
    if not patch_idx:
        return pixels.sum() * 0.0
    txt = torch.stack([model.encode_text(n) for n in class_names])
    scale = model.logit_scale.exp().clamp(max=100.0)
    logits = scale * emb[patch_idx] @ txt.t()
    return torch.nn.functional.cross_entropy(logits, torch.tensor(patch_labels))


def region_top1(
    model: ClipModel,
    pool: list[tuple[torch.Tensor, torch.Tensor, list[int]]],
    vocab: Vocabulary,
) -> float:
    """Region -> class-text retrieval accuracy over a scene pool."""
    correct = total = 0
    with torch.no_grad():
        txt = torch.stack([model.encode_text(n) for n in vocab.classes])
        for pixels, boxes, labels in pool:
            emb = model.encode_image_rois(ImageSample(pixels), boxes)
            pred = (emb @ txt.t()).argmax(dim=-1)
            correct += int((pred == torch.tensor(labels)).sum())
            total += len(labels)
    return correct / max(total, 1)


def retrieval_top1(model: ClipModel, pixels: torch.Tensor, labels: list[int], vocab: Vocabulary) -> float:
    """Crop -> class-text retrieval accuracy."""
    with torch.no_grad():
        img = model.encode_image_batch(pixels)
        txt = torch.stack([model.encode_text(n) for n in vocab.classes])
        pred = (img @ txt.t()).argmax(dim=-1)
    return float((pred == torch.tensor(labels)).float().mean())


def pretrain_clip(
    model: ClipModel, vocab: Vocabulary, cfg: PretrainConfig
) -> dict[str, float]:
    """Contrastive pretraining over all classes; returns holdout retrieval stats."""
    if vocab.k < 2:
        raise ValueError("need at least 2 classes for contrastive pretraining")
    size = model.cfg.input_size
    train_crops, train_labels = make_crop_dataset(
        vocab, cfg.crops_per_class, size, cfg.seed, cfg.noise
    )
    held_crops, held_labels = make_crop_dataset(
        vocab, cfg.holdout_per_class, size, cfg.seed + 1, cfg.noise
    )
    by_class = {c: [i for i, l in enumerate(train_labels) if l == c] for c in range(vocab.k)}
    pool = (
        make_scene_pool(vocab, cfg.region_scenes, cfg.region_canvas, cfg.seed + 2, cfg.noise)
        if cfg.region_scenes > 0 and cfg.region_weight > 0
        else []
    )
    held_pool = (
        make_scene_pool(vocab, max(cfg.region_scenes // 8, 1), cfg.region_canvas, cfg.seed + 3, cfg.noise)
        if pool
        else []
    )
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.steps)
    rng = random.Random(cfg.seed)
    last_loss = math.nan
    warmup_steps = int(cfg.steps * cfg.warmup_fraction)
    for step in range(cfg.steps):
        idx = [rng.choice(by_class[c]) for c in range(vocab.k)]
        loss = contrastive_loss(model, train_crops[idx], vocab.classes)
        if pool and step >= warmup_steps:
            pixels, boxes, labels = pool[rng.randrange(len(pool))]
            pixels, boxes = dihedral_transform(pixels, boxes, rng.randrange(4), rng.random() < 0.5)
            loss = loss + cfg.region_weight * region_alignment_loss(
                model, pixels, boxes, labels, vocab.classes
            )
            if cfg.patch_weight > 0:
                loss = loss + cfg.patch_weight * patch_alignment_loss(
                    model, pixels, boxes, labels, vocab.classes
                )
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        last_loss = float(loss.detach())
    model.eval()
    stats = {
        "final_loss": last_loss,
        "holdout_top1": retrieval_top1(model, held_crops, held_labels, vocab),
    }
    if held_pool:
        stats["region_top1"] = region_top1(model, held_pool, vocab)
    return stats


def dihedral_transform(
    pixels: torch.Tensor, boxes: torch.Tensor, quarter_turns: int, flip: bool
) -> tuple[torch.Tensor, torch.Tensor]:
    """Rotate a square H x W x C image by 90-degree steps and optionally mirror
    it horizontally, transforming normalized cxcywh boxes to match."""
    if pixels.shape[0] != pixels.shape[1]:
        raise ValueError("dihedral transforms need a square image")
    k = quarter_turns % 4
    if k:
        pixels = torch.rot90(pixels, k, dims=(0, 1))
    if flip:
        pixels = torch.flip(pixels, dims=(1,))
    if boxes.numel():
        cx, cy, w, h = boxes.unbind(-1)
        for _ in range(k):  # one counter-clockwise quarter turn per step
            cx, cy, w, h = cy, 1.0 - cx, h, w
        if flip:
            cx = 1.0 - cx
        boxes = torch.stack([cx, cy, w, h], dim=-1)
    return pixels, boxes


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(
            params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
        )
    return torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_detector(
    manifest: DatasetManifest,
    detector: OpenVocabDetector,
    clip_model: ClipModel,
    weights: LossWeights,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> list[dict[str, float]]:
    """Gradient descent on the matched loss; CLIP stays frozen.

    Per-batch prompts are the base classes present in the batch plus up to
    neg_prompts sampled absent base classes. Writes a loss CSV and periodic
    checkpoints when out_dir is given.
    """
    manifest.check_train_split()
    vocab = manifest.vocabulary
    clip_model.eval()
    for p in clip_model.parameters():
        p.requires_grad_(False)

    base_ids = sorted(vocab.base_ids)
    with torch.no_grad():
        raw_text = torch.stack([clip_model.encode_text(vocab.classes[c]) for c in base_ids])
    raw_by_class = {c: raw_text[i] for i, c in enumerate(base_ids)}

    root = manifest.root or Path(".")
    images = [load_image(root, rec) for rec in manifest.train]
    gts = [
        GroundTruthSet(
            boxes=torch.tensor([ann.box for ann in rec.annotations], dtype=torch.float32).reshape(-1, 4),
            class_indices=[ann.class_index for ann in rec.annotations],
        )
        for rec in manifest.train
    ]

    opt = _make_optimizer([p for p in detector.parameters() if p.requires_grad], cfg)
    sched = (
        torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.steps)
        if cfg.cosine_decay
        else None
    )
    rng = random.Random(cfg.seed)
    history: list[dict[str, float]] = []
    log_rows = []

    detector.train()
    for step in range(cfg.steps):
        batch_idx = [rng.randrange(len(images)) for _ in range(cfg.batch_size)]
        present = sorted({c for i in batch_idx for c in gts[i].class_indices})
        absent = [c for c in base_ids if c not in present]
        rng.shuffle(absent)
        prompt_ids = present + sorted(absent[: cfg.neg_prompts])
        if not prompt_ids:
            continue
        raw = torch.stack([raw_by_class[c] for c in prompt_ids])
        prompts = project_prompts(raw, detector.prompt_proj, prompt_ids, ["text"] * len(prompt_ids))

        batch_gts = []
        batch_pixels = []
        for i in batch_idx:
            px, bx = images[i], gts[i].boxes
            if cfg.augment:
                px, bx = dihedral_transform(px, bx, rng.randrange(4), rng.random() < 0.5)
            batch_pixels.append(px)
            batch_gts.append(GroundTruthSet(boxes=bx, class_indices=gts[i].class_indices))
        pixels = torch.stack(batch_pixels)
        memory = PatchGrid(detector.encoder.encode_batch(pixels), 0, 0)
        out = detector.decoder.decode_prompt(prompts, memory)

        parts = {"cls": 0.0, "l1": 0.0, "iou": 0.0, "embed": 0.0}
        batch_loss = 0.0
        for b, gt in enumerate(batch_gts):
            sliced = type(out)(
                boxes=out.boxes[b], probs=out.probs[b], object_embeddings=out.object_embeddings[b]
            )
            lb = total_loss(gt, sliced, prompts, weights, embed_proj=detector.decoder.cls_proj)
            batch_loss = batch_loss + lb.total
            for key in parts:
                parts[key] += float(getattr(lb, key).detach())
        batch_loss = batch_loss / cfg.batch_size

        opt.zero_grad()
        batch_loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(detector.parameters(), cfg.grad_clip)
        opt.step()
        if sched is not None:
            sched.step()

        row = {key: val / cfg.batch_size for key, val in parts.items()}
        row.update(step=step, total=float(batch_loss.detach()))
        history.append(row)
        if out_dir is not None:
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                log_rows.append(row)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(
                    Path(out_dir) / f"detector_{step + 1:06d}.pt",
                    "detector",
                    {"decoder": detector.decoder.cfg.__dict__, "encoder": detector.encoder.cfg.__dict__},
                    detector,
                )

    detector.eval()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "loss_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "cls", "l1", "iou", "embed", "total"])
            writer.writeheader()
            writer.writerows(log_rows)
        save_checkpoint(
            out / "detector_final.pt",
            "detector",
            {"decoder": detector.decoder.cfg.__dict__, "encoder": detector.encoder.cfg.__dict__},
            detector,
        )
    return history


def smoothed(values: list[float], window: int = 20) -> list[float]:
    """Trailing moving average, used by convergence checks."""
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(values[lo : i + 1])))
    return out
