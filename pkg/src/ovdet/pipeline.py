"""Full inference pipeline: decode with prompts for the whole vocabulary, prune
RoIs by object score, score survivors with CLIP under RoI masks, ensemble the
two probability matrices, and emit final detections. No NMS anywhere."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .clip import ClipModel, clip_probs
from .decoder import Decoder, DetectionOutput, PromptSet, project_prompts
from .encoder import Encoder, ImageSample
from .geometry import box_cxcywh_to_xyxy
from .nn_core import reset_linear_, seeded_generator


@dataclass(frozen=True)
class Vocabulary:
    """Ordered class list partitioned into base and novel index sets."""

    classes: list[str]
    base_ids: frozenset[int]
    novel_ids: frozenset[int]

    def __post_init__(self):
        all_ids = set(range(len(self.classes)))
        if self.base_ids & self.novel_ids:
            raise ValueError("base and novel sets overlap")
        if self.base_ids | self.novel_ids != all_ids:
            raise ValueError("base and novel sets must cover all classes")

    @property
    def k(self) -> int:
        return len(self.classes)

    def words(self) -> list[str]:
        return sorted({w for name in self.classes for w in name.split()})

    def save(self, path: str | Path) -> None:
        lines = [
            f"{name},{'base' if i in self.base_ids else 'novel'}"
            for i, name in enumerate(self.classes)
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        classes, base, novel = [], set(), set()
        for i, line in enumerate(Path(path).read_text().splitlines()):
            if not line.strip():
                continue
            name, flag = line.rsplit(",", 1)
            if flag not in ("base", "novel"):
                raise ValueError(f"bad vocabulary flag {flag!r} on line {i + 1}")
            (base if flag == "base" else novel).add(len(classes))
            classes.append(name)
        return cls(classes, frozenset(base), frozenset(novel))


@dataclass(frozen=True)
class EnsembleConfig:
    alpha: float = 0.2
    beta: float = 0.4
    epsilon: float = 0.125  # RoI pruning threshold on the object score
    tau: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "epsilon"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]  # absolute xyxy pixels
    class_index: int
    score: float
    image_id: int


def prune_rois(
    boxes: torch.Tensor, probs: torch.Tensor, epsilon: float
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Keep rows whose object score (max class probability) reaches epsilon."""
    scores = probs.max(dim=-1).values
    keep = torch.nonzero(scores >= epsilon).flatten()
    return boxes[keep], probs[keep], keep


def ensemble_probs(
    p_det: torch.Tensor, p_clip: torch.Tensor, vocab: Vocabulary, cfg: EnsembleConfig
) -> torch.Tensor:
    """Convex per-column mix: alpha for base columns, beta for novel columns."""
    if p_det.shape != p_clip.shape:
        raise ValueError(f"shape mismatch {tuple(p_det.shape)} vs {tuple(p_clip.shape)}")
    if p_det.shape[-1] != vocab.k:
        raise ValueError("probability columns != vocabulary size")
    weights = torch.tensor(
        [cfg.alpha if j in vocab.base_ids else cfg.beta for j in range(vocab.k)]
    )
    return weights * p_det + (1 - weights) * p_clip


class OpenVocabDetector(nn.Module):
    """Encoder + prompt projection + decoder, the trainable detection model."""

    def __init__(self, encoder: Encoder, decoder: Decoder, clip_width: int, proj_seed: int = 3):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder
        self.prompt_proj = reset_linear_(
            nn.Linear(clip_width, decoder.cfg.d), seeded_generator(proj_seed)
        )

    def build_prompts(
        self, clip_model: ClipModel, vocab: Vocabulary, class_ids: list[int]
    ) -> PromptSet:
        """Text-modality prompts for the given vocabulary indices."""
        with torch.no_grad():
            raw = torch.stack([clip_model.encode_text(vocab.classes[c]) for c in class_ids])
        return project_prompts(raw, self.prompt_proj, class_ids, ["text"] * len(class_ids))

    def build_image_prompts(
        self, clip_model: ClipModel, images: list[ImageSample], class_ids: list[int]
    ) -> PromptSet:
        """Image-modality prompts: CLIP embeddings of exemplar crops."""
        with torch.no_grad():
            raw = torch.stack([clip_model.encode_image(img) for img in images])
        return project_prompts(raw, self.prompt_proj, class_ids, ["image"] * len(class_ids))

    def forward(self, image: ImageSample, prompts: PromptSet) -> DetectionOutput:
        memory = self.encoder(image)
        return self.decoder.decode_prompt(prompts, memory)


@dataclass
class PipelineModels:
    detector: OpenVocabDetector
    clip: ClipModel
    text_embeddings: torch.Tensor | None = field(default=None, repr=False)  # (k, d') cache


def detect(
    image: ImageSample,
    vocab: Vocabulary,
    models: PipelineModels,
    cfg: EnsembleConfig,
    score_floor: float = 0.05,
    top_n: int = 300,
    prompts: PromptSet | None = None,
) -> list[Detection]:
    """Run the full pipeline on one image; prompts cover base + novel classes.

    A custom PromptSet (e.g. image-modality prompts) may be supplied; it must
    index the same vocabulary.
    """
    if vocab.k == 0:
        raise ValueError("empty vocabulary")
    with torch.no_grad():
        if prompts is None:
            prompts = models.detector.build_prompts(models.clip, vocab, list(range(vocab.k)))
        out = models.detector(image, prompts)
        boxes, p_det, kept = prune_rois(out.boxes, out.probs, cfg.epsilon)
        if kept.numel() == 0:
            return []
        roi_emb = models.clip.encode_image_rois(image, boxes)
        if models.text_embeddings is None:
            models.text_embeddings = torch.stack(
                [models.clip.encode_text(name) for name in vocab.classes]
            )
        p_clip = clip_probs(roi_emb, models.text_embeddings, cfg.tau)
        p_final = ensemble_probs(p_det, p_clip, vocab, cfg)

    h, w = image.pixels.shape[0], image.pixels.shape[1]
    xyxy = box_cxcywh_to_xyxy(boxes) * torch.tensor([w, h, w, h], dtype=boxes.dtype)
    flat = p_final.flatten()
    order = torch.argsort(flat, descending=True, stable=True)
    detections: list[Detection] = []
    for idx in order.tolist():
        score = float(flat[idx])
        if score < score_floor or len(detections) >= top_n:
            break
        row, col = divmod(idx, vocab.k)
        detections.append(
            Detection(
                box=tuple(float(v) for v in xyxy[row]),
                class_index=col,
                score=score,
                image_id=image.image_id,
            )
        )
    return detections


def to_coco_results(detections: list[Detection]) -> list[dict]:
    """COCO-results-style records: bbox is [x, y, w, h] in absolute pixels."""
    return [
        {
            "image_id": d.image_id,
            "category_id": d.class_index,
            "bbox": [d.box[0], d.box[1], d.box[2] - d.box[0], d.box[3] - d.box[1]],
            "score": d.score,
        }
        for d in detections
    ]
