"""Detection metrics: per-class AP at a fixed IoU threshold (101-point
interpolation), base/novel mAP splits, and top-100 recall."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .datagen import ImageRecord
from .geometry import iou_xyxy
from .pipeline import Detection, Vocabulary


@dataclass(frozen=True)
class EvalReport:
    map50_all: float
    map50_base: float
    map50_novel: float
    recall_all: float
    recall_base: float
    recall_novel: float
    per_class_ap: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map50_all": self.map50_all,
            "map50_base": self.map50_base,
            "map50_novel": self.map50_novel,
            "recall_all": self.recall_all,
            "recall_base": self.recall_base,
            "recall_novel": self.recall_novel,
            "per_class_ap": self.per_class_ap,
        }


def average_precision(
    detections: list[tuple[int, float, tuple[float, float, float, float]]],
    ground_truths: dict[int, list[tuple[float, float, float, float]]],
    iou_threshold: float = 0.5,
) -> float:
    """AP for one class from (image_id, score, xyxy box) detections.

    Greedy matching: detections in descending score order (ties keep input
    order), each ground truth matched at most once. 101-point interpolated
    area under the precision-recall curve.
    """
    num_gt = sum(len(v) for v in ground_truths.values())
    if num_gt == 0:
        raise ValueError("AP undefined with zero ground truths")
    order = sorted(range(len(detections)), key=lambda i: -detections[i][1])
    matched: dict[int, list[bool]] = {img: [False] * len(b) for img, b in ground_truths.items()}
    tp = []
    for i in order:
        image_id, _, box = detections[i]
        gt_boxes = ground_truths.get(image_id, [])
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gt_boxes):
            if matched[image_id][j]:
                continue
            iou = float(iou_xyxy(torch.tensor(box), torch.tensor(gt)))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_iou >= iou_threshold:
            matched[image_id][best_j] = True
            tp.append(1)
        else:
            tp.append(0)

    precisions, recalls = [], []
    cum_tp = 0
    for i, hit in enumerate(tp):
        cum_tp += hit
        precisions.append(cum_tp / (i + 1))
        recalls.append(cum_tp / num_gt)
    ap = 0.0
    for t in range(101):
        r = t / 100.0
        ap += max((prec for prec, rec in zip(precisions, recalls) if rec >= r), default=0.0)
    return ap / 101.0


def _abs_gt_boxes(records: list[ImageRecord], class_index: int):
    out: dict[int, list[tuple[float, float, float, float]]] = {}
    for rec in records:
        boxes = []
        for ann in rec.annotations:
            if ann.class_index != class_index:
                continue
            cx, cy, w, h = ann.box
            boxes.append(
                (
                    (cx - w / 2) * rec.width,
                    (cy - h / 2) * rec.height,
                    (cx + w / 2) * rec.width,
                    (cy + h / 2) * rec.height,
                )
            )
        out[rec.image_id] = boxes
    return out


def evaluate(
    detections: list[Detection],
    records: list[ImageRecord],
    vocab: Vocabulary,
    iou_threshold: float = 0.5,
    recall_top_n: int = 100,
) -> EvalReport:
    """Per-class AP over the evaluated classes, averaged over all / base / novel."""
    for det in detections:
        if not 0 <= det.class_index < vocab.k:
            raise ValueError(f"unknown class index {det.class_index}")
    by_class: dict[int, list] = {i: [] for i in range(vocab.k)}
    for det in detections:
        by_class[det.class_index].append((det.image_id, det.score, det.box))

    per_class: dict[int, float] = {}
    for c in range(vocab.k):
        gts = _abs_gt_boxes(records, c)
        if sum(len(v) for v in gts.values()) == 0:
            continue  # class absent from the ground truth: excluded from means
        per_class[c] = average_precision(by_class[c], gts, iou_threshold)

    def mean_over(ids) -> float:
        vals = [ap for c, ap in per_class.items() if c in ids]
        return sum(vals) / len(vals) if vals else 0.0

    recalls = _recall_splits(detections, records, vocab, iou_threshold, recall_top_n)
    return EvalReport(
        map50_all=mean_over(set(per_class)),
        map50_base=mean_over(vocab.base_ids),
        map50_novel=mean_over(vocab.novel_ids),
        recall_all=recalls[0],
        recall_base=recalls[1],
        recall_novel=recalls[2],
        per_class_ap={vocab.classes[c]: ap for c, ap in sorted(per_class.items())},
    )


def _recall_splits(detections, records, vocab, iou_threshold, top_n):
    """Fraction of ground-truth boxes covered by a same-class top-N detection."""
    by_image: dict[int, list[Detection]] = {}
    for det in sorted(detections, key=lambda d: -d.score):
        by_image.setdefault(det.image_id, [])
        if len(by_image[det.image_id]) < top_n:
            by_image[det.image_id].append(det)

    found = {"all": 0, "base": 0, "novel": 0}
    total = {"all": 0, "base": 0, "novel": 0}
    for rec in records:
        dets = by_image.get(rec.image_id, [])
        for ann in rec.annotations:
            split = "base" if ann.class_index in vocab.base_ids else "novel"
            cx, cy, w, h = ann.box
            gt = torch.tensor(
                (
                    (cx - w / 2) * rec.width,
                    (cy - h / 2) * rec.height,
                    (cx + w / 2) * rec.width,
                    (cy + h / 2) * rec.height,
                )
            )
            hit = any(
                d.class_index == ann.class_index
                and float(iou_xyxy(torch.tensor(d.box), gt)) >= iou_threshold
                for d in dets
            )
            for key in ("all", split):
                total[key] += 1
                found[key] += int(hit)
    return tuple(
        found[key] / total[key] if total[key] else 0.0 for key in ("all", "base", "novel")
    )
