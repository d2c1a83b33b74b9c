"""Box geometry shared by the losses and the evaluator.

Boxes come in two layouts: normalized (cx, cy, w, h) inside the models and
absolute (x1, y1, x2, y2) at the API edges.
"""

from __future__ import annotations

import torch


def box_cxcywh_to_xyxy(boxes: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def box_xyxy_to_cxcywh(boxes: torch.Tensor) -> torch.Tensor:
    x1, y1, x2, y2 = boxes.unbind(-1)
    return torch.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], dim=-1)


def _inter_union(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    lt = torch.maximum(a[..., :2], b[..., :2])
    rb = torch.minimum(a[..., 2:], b[..., 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[..., 2] - a[..., 0]).clamp(min=0) * (a[..., 3] - a[..., 1]).clamp(min=0)
    area_b = (b[..., 2] - b[..., 0]).clamp(min=0) * (b[..., 3] - b[..., 1]).clamp(min=0)
    return inter, area_a + area_b - inter


def iou_xyxy(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Intersection over union; 0 when the union is empty."""
    inter, union = _inter_union(a, b)
    return torch.where(union > 0, inter / union.clamp_min(1e-12), torch.zeros_like(union))


def giou_xyxy(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Generalized IoU: IoU minus the hull fraction not covered by the union.

    Defined as 0 when both boxes have zero area (empty hull), keeping early
    training finite when predictions degenerate.
    """
    inter, union = _inter_union(a, b)
    iou = torch.where(union > 0, inter / union.clamp_min(1e-12), torch.zeros_like(union))
    lt = torch.minimum(a[..., :2], b[..., :2])
    rb = torch.maximum(a[..., 2:], b[..., 2:])
    hull = (rb - lt).clamp(min=0).prod(dim=-1)
    return torch.where(hull > 0, iou - (hull - union) / hull.clamp_min(1e-12), torch.zeros_like(iou))


def giou_cxcywh(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return giou_xyxy(box_cxcywh_to_xyxy(a), box_cxcywh_to_xyxy(b))
