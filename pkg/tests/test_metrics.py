"""Evaluation metrics against hand-computed precision-recall areas."""

import random

import pytest

from ovdet.datagen import AnnotationRecord, ImageRecord
from ovdet.metrics import average_precision, evaluate
from ovdet.pipeline import Detection, Vocabulary

# All fixture images are 100 x 100, so a normalized cxcywh box (cx, cy, w, h)
# has absolute corners ((cx-w/2)*100, ..., (cx+w/2)*100).
GT_A = (20.0, 20.0, 40.0, 40.0)  # cxcywh (0.3, 0.3, 0.2, 0.2)
GT_B = (60.0, 60.0, 80.0, 80.0)  # cxcywh (0.7, 0.7, 0.2, 0.2)
FAR = (0.0, 90.0, 10.0, 100.0)  # overlaps neither


def ann(cx, cy, w, h, c=0):
    return AnnotationRecord(class_index=c, box=(cx, cy, w, h))


def record(image_id, annotations):
    return ImageRecord(
        image_id=image_id, file_name=f"{image_id}.png", width=100, height=100,
        annotations=annotations,
    )


class TestAveragePrecision:
    def test_single_true_positive(self):
        ap = average_precision([(1, 0.9, GT_A)], {1: [GT_A]})
        assert abs(ap - 1.0) < 1e-9

    def test_tp_then_fp_still_one(self):
        """The FP comes after full recall, so interpolated precision stays 1."""
        ap = average_precision([(1, 0.9, GT_A), (1, 0.8, FAR)], {1: [GT_A]})
        assert abs(ap - 1.0) < 1e-9

    def test_fp_then_tp_gives_half(self):
        """Precision is 1/2 at every recall level: AP = 0.5 exactly."""
        ap = average_precision([(1, 0.9, FAR), (1, 0.8, GT_A)], {1: [GT_A]})
        assert abs(ap - 0.5) < 1e-9

    def test_duplicate_detection_counts_once(self):
        """A second hit on an already-matched ground truth is a false positive."""
        ap = average_precision([(1, 0.9, GT_A), (1, 0.8, GT_A)], {1: [GT_A]})
        assert abs(ap - 1.0) < 1e-9  # FP after full recall

    def test_low_iou_is_false_positive(self):
        shifted = (45.0, 45.0, 65.0, 65.0)  # IoU with GT_B well below 0.5
        ap = average_precision([(1, 0.9, shifted)], {1: [GT_B]})
        assert ap == 0.0

    def test_missed_gt_caps_recall(self):
        # One TP out of two ground truths: p(r)=1 for r <= 0.5, else 0.
        ap = average_precision([(1, 0.9, GT_A)], {1: [GT_A, GT_B]})
        assert abs(ap - 51 / 101) < 1e-9

    def test_zero_gt_rejected(self):
        with pytest.raises(ValueError):
            average_precision([], {1: []})

    def test_input_order_invariance_without_ties(self):
        dets = [(1, 0.9, GT_A), (2, 0.8, FAR), (2, 0.7, GT_A), (3, 0.6, GT_B)]
        gts = {1: [GT_A], 2: [GT_A], 3: [GT_B]}
        want = average_precision(dets, gts)
        rng = random.Random(0)
        for _ in range(5):
            shuffled = dets[:]
            rng.shuffle(shuffled)
            assert abs(average_precision(shuffled, gts) - want) < 1e-12


class TestEvaluateThreeImageFixture:
    """Hand-computed report for two classes over three images.

    Class 0 (base): 4 ground truths; detections in score order are
    TP, FP, TP, TP with one ground truth never found.
      precisions 1, 1/2, 2/3, 3/4; recalls 1/4, 1/4, 1/2, 3/4
      101-point AP = (26*1 + 50*0.75) / 101 = 63.5 / 101
    Class 1 (novel): 1 ground truth, found by a single exact detection: AP = 1.
    """

    VOCAB = Vocabulary(classes=["c0", "c1"], base_ids=frozenset({0}), novel_ids=frozenset({1}))
    RECORDS = [
        record(1, [ann(0.3, 0.3, 0.2, 0.2), ann(0.7, 0.7, 0.2, 0.2), ann(0.3, 0.3, 0.2, 0.2, c=1)]),
        record(2, [ann(0.3, 0.3, 0.2, 0.2)]),
        record(3, [ann(0.7, 0.7, 0.2, 0.2)]),
    ]
    DETECTIONS = [
        Detection(box=GT_A, class_index=0, score=0.9, image_id=1),  # TP
        Detection(box=FAR, class_index=0, score=0.8, image_id=2),   # FP
        Detection(box=GT_A, class_index=0, score=0.7, image_id=2),  # TP
        Detection(box=GT_B, class_index=0, score=0.6, image_id=3),  # TP
        Detection(box=GT_A, class_index=1, score=0.5, image_id=1),  # TP (class 1)
    ]

    def test_hand_computed_aps(self):
        rep = evaluate(self.DETECTIONS, self.RECORDS, self.VOCAB)
        ap0 = 63.5 / 101
        assert abs(rep.map50_base - ap0) < 1e-6
        assert abs(rep.map50_novel - 1.0) < 1e-6
        assert abs(rep.map50_all - (ap0 + 1.0) / 2) < 1e-6
        assert abs(rep.per_class_ap["c0"] - ap0) < 1e-6

    def test_recall_splits(self):
        rep = evaluate(self.DETECTIONS, self.RECORDS, self.VOCAB)
        assert abs(rep.recall_base - 3 / 4) < 1e-9  # GT_B in image 1 never found
        assert abs(rep.recall_novel - 1.0) < 1e-9
        assert abs(rep.recall_all - 4 / 5) < 1e-9

    def test_ground_truth_as_predictions_scores_one(self):
        dets = []
        for rec in self.RECORDS:
            for a in rec.annotations:
                cx, cy, w, h = a.box
                box = ((cx - w / 2) * 100, (cy - h / 2) * 100, (cx + w / 2) * 100, (cy + h / 2) * 100)
                dets.append(Detection(box=box, class_index=a.class_index, score=1.0, image_id=rec.image_id))
        rep = evaluate(dets, self.RECORDS, self.VOCAB)
        assert rep.map50_all == 1.0 and rep.map50_base == 1.0 and rep.map50_novel == 1.0
        assert rep.recall_all == 1.0

    def test_empty_predictions_score_zero(self):
        rep = evaluate([], self.RECORDS, self.VOCAB)
        assert rep.map50_all == 0.0 and rep.recall_all == 0.0

    def test_unknown_class_rejected(self):
        bad = [Detection(box=GT_A, class_index=9, score=0.9, image_id=1)]
        with pytest.raises(ValueError):
            evaluate(bad, self.RECORDS, self.VOCAB)

    def test_class_absent_from_gt_excluded_from_mean(self):
        """A vocabulary class with no ground truths does not drag the mean down."""
        vocab = Vocabulary(classes=["c0", "c1", "c2"], base_ids=frozenset({0, 2}), novel_ids=frozenset({1}))
        rep = evaluate(self.DETECTIONS, self.RECORDS, vocab)
        assert abs(rep.map50_base - 63.5 / 101) < 1e-6
        assert "c2" not in rep.per_class_ap
