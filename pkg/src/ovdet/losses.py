"""Training losses: focal classification, L1 + GIoU box regression, embedding
distillation, and the matching cost that ties them to the Hungarian assignment."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .decoder import DetectionOutput, PromptSet
from .geometry import giou_cxcywh
from .matching import MatchAssignment, hungarian

PROB_EPS = 1e-7


@dataclass(frozen=True)
class GroundTruthSet:
    """g normalized cxcywh boxes with their class indices (base classes at train time)."""

    boxes: torch.Tensor  # (g, 4)
    class_indices: list[int]

    @property
    def g(self) -> int:
        return len(self.class_indices)


@dataclass(frozen=True)
class LossWeights:
    lam_cls: float = 3.0
    lam_l1: float = 5.0
    lam_iou: float = 2.0
    lam_embed: float = 2.0
    focal_gamma: float = 2.0
    focal_weight: float = 0.25


@dataclass(frozen=True)
class LossBreakdown:
    cls: torch.Tensor
    l1: torch.Tensor
    iou: torch.Tensor
    embed: torch.Tensor
    total: torch.Tensor
    assignment: MatchAssignment


def focal_loss(
    prob: torch.Tensor, target: torch.Tensor, gamma: float = 2.0, weight: float = 0.25
) -> torch.Tensor:
    """Elementwise focal loss on probabilities (not logits).

    Positive: weight * (1-p)^gamma * -log(p); negative: (1-weight) * p^gamma * -log(1-p).
    """
    p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pos = weight * (1 - p) ** gamma * -torch.log(p)
    neg = (1 - weight) * p**gamma * -torch.log(1 - p)
    return torch.where(target > 0.5, pos, neg)


def embedding_loss(
    matched_object_embeddings: torch.Tensor, matched_prompt_embeddings: torch.Tensor
) -> torch.Tensor:
    """Mean L1 distance between matched (projected) object and prompt embeddings."""
    if matched_object_embeddings.shape != matched_prompt_embeddings.shape:
        raise ValueError("matched embedding shapes differ")
    if matched_object_embeddings.numel() == 0:
        return torch.tensor(0.0)
    return (matched_object_embeddings - matched_prompt_embeddings).abs().mean()


def match_cost(
    gt: GroundTruthSet,
    out: DetectionOutput,
    weights: LossWeights,
    prompt_class_ids: list[int],
) -> torch.Tensor:
    """g x m matching-cost matrix.

    cost[i][q] = lam_cls * (-prob of gt class at query q)
               + lam_l1 * |b_i - b_q|_1 + lam_iou * (1 - giou(b_i, b_q)).
    """
    if gt.g < 1:
        raise ValueError("need at least one ground-truth box")
    col_of = {c: j for j, c in enumerate(prompt_class_ids)}
    missing = [c for c in gt.class_indices if c not in col_of]
    if missing:
        raise ValueError(f"ground-truth classes {missing} not among prompts {prompt_class_ids}")
    cols = [col_of[c] for c in gt.class_indices]

    cls_cost = -out.probs[:, cols].t()  # (g, m)
    l1 = (gt.boxes[:, None, :] - out.boxes[None, :, :]).abs().sum(-1)
    giou = giou_cxcywh(gt.boxes[:, None, :], out.boxes[None, :, :])
    return weights.lam_cls * cls_cost + weights.lam_l1 * l1 + weights.lam_iou * (1 - giou)


def total_loss(
    gt: GroundTruthSet,
    out: DetectionOutput,
    prompts: PromptSet,
    weights: LossWeights,
    embed_proj=None,
) -> LossBreakdown:
    """Hungarian-matched training loss (weighted focal + L1 + GIoU + embedding).

    Classification runs over all m x k query/prompt pairs: the matched pair for
    each ground truth is the positive for its class column, everything else is
    negative. Box and embedding terms average over the matched pairs.
    embed_proj, when given, maps object embeddings into prompt space before the
    embedding loss (the classification head's object projection).
    """
    m, k = out.probs.shape
    zero = out.probs.sum() * 0.0  # keeps the graph alive for g = 0 box terms
    if gt.g == 0:
        assignment = MatchAssignment(pairs=[], total_cost=0.0)
        cls = focal_loss(out.probs, torch.zeros(m, k), weights.focal_gamma, weights.focal_weight).sum()
        l1 = iou = embed = zero
    else:
        with torch.no_grad():
            cost = match_cost(gt, out, weights, prompts.class_ids)
        assignment = hungarian(cost)
        gt_idx = [i for i, _ in assignment.pairs]
        q_idx = [q for _, q in assignment.pairs]
        col_of = {c: j for j, c in enumerate(prompts.class_ids)}
        targets = torch.zeros(m, k)
        for i, q in assignment.pairs:
            targets[q, col_of[gt.class_indices[i]]] = 1.0

        cls = focal_loss(out.probs, targets, weights.focal_gamma, weights.focal_weight).sum()
        matched_gt = gt.boxes[gt_idx]
        matched_pred = out.boxes[q_idx]
        l1 = (matched_gt - matched_pred).abs().sum() / gt.g
        iou = (1 - giou_cxcywh(matched_gt, matched_pred)).sum() / gt.g
        obj = out.object_embeddings[q_idx]
        if embed_proj is not None:
            obj = embed_proj(obj)
        embed = embedding_loss(obj, prompts.embeddings[[col_of[gt.class_indices[i]] for i in gt_idx]])
    cls = cls / max(gt.g, 1)
    total = (
        weights.lam_cls * cls
        + weights.lam_l1 * l1
        + weights.lam_iou * iou
        + weights.lam_embed * embed
    )
    return LossBreakdown(cls=cls, l1=l1, iou=iou, embed=embed, total=total, assignment=assignment)
