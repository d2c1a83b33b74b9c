"""Synthetic dataset generator: determinism, box tightness, split discipline,
COCO round-tripping."""

import json

import numpy as np
import pytest
import torch

from ovdet.datagen import (
    COLORS,
    DatasetManifest,
    default_vocabulary,
    generate_dataset,
    load_coco_annotations,
    load_image,
    make_scene,
    render_class_crop,
    render_scene,
)
from ovdet.pipeline import Vocabulary

BACKGROUND = np.array([110, 110, 110], dtype=np.float32) / 255.0


class TestVocabulary:
    def test_default_partition(self):
        vocab = default_vocabulary()
        assert vocab.k == 16
        assert len(vocab.novel_ids) == 4
        assert vocab.base_ids | vocab.novel_ids == frozenset(range(16))
        assert not vocab.base_ids & vocab.novel_ids

    def test_novel_factors_covered_by_base(self):
        """Every novel color and shape also appears in some base class."""
        vocab = default_vocabulary()
        base = [vocab.classes[i] for i in vocab.base_ids]
        for i in vocab.novel_ids:
            color, shape = vocab.classes[i].split()
            assert any(b.split()[0] == color for b in base)
            assert any(b.split()[1] == shape for b in base)


class TestMakeScene:
    def test_deterministic_per_seed(self):
        names = [f"{c} circle" for c in COLORS]
        a = make_scene(64, names, (1, 3), 0.02, seed=5)
        b = make_scene(64, names, (1, 3), 0.02, seed=5)
        assert a == b

    def test_low_pairwise_overlap(self):
        names = list(default_vocabulary().classes)
        for seed in range(20):
            spec = make_scene(64, names, (2, 3), 0.02, seed=seed)
            boxes = [box for _, box, _ in spec.objects]
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    (ax, ay, aw, ah), (bx, by, bw, bh) = boxes[i], boxes[j]
                    ix = max(0, min(ax + aw / 2, bx + bw / 2) - max(ax - aw / 2, bx - bw / 2))
                    iy = max(0, min(ay + ah / 2, by + bh / 2) - max(ay - ah / 2, by - bh / 2))
                    inter = ix * iy
                    union = aw * ah + bw * bh - inter
                    assert inter / union <= 0.3 + 1e-9

    def test_boxes_inside_canvas(self):
        names = list(default_vocabulary().classes)
        for seed in range(20):
            for cx, cy, w, h in (b for _, b, _ in make_scene(64, names, (1, 3), 0.02, seed).objects):
                assert cx - w / 2 >= 0 and cy - h / 2 >= 0
                assert cx + w / 2 <= 1 and cy + h / 2 <= 1
                assert w > 0 and h > 0


def box_tightness(arr: np.ndarray, box, canvas: int) -> float:
    """IoU between the annotation box and the rendered foreground's bbox."""
    fg = np.abs(arr - BACKGROUND).max(axis=-1) > 0.15
    ys, xs = np.nonzero(fg)
    rx1, ry1, rx2, ry2 = xs.min(), ys.min(), xs.max() + 1, ys.max() + 1
    cx, cy, w, h = box
    ax1, ay1 = (cx - w / 2) * canvas, (cy - h / 2) * canvas
    ax2, ay2 = (cx + w / 2) * canvas, (cy + h / 2) * canvas
    ix = max(0, min(ax2, rx2) - max(ax1, rx1))
    iy = max(0, min(ay2, ry2) - max(ay1, ry1))
    inter = ix * iy
    union = (ax2 - ax1) * (ay2 - ay1) + (rx2 - rx1) * (ry2 - ry1) - inter
    return inter / union


class TestRenderScene:
    def test_annotation_box_tight_around_rendered_shape(self):
        """Single-object scenes: annotation box vs actual painted pixels.

        Anti-aliasing blurs the shape boundary by about a pixel, so the bound
        is 0.9 rather than 1."""
        names = list(default_vocabulary().classes)
        for seed in range(12):
            spec = make_scene(96, names, (1, 1), 0.0, seed=seed)
            arr = render_scene(spec)
            assert box_tightness(arr, spec.objects[0][1], 96) >= 0.9, (seed, spec.objects)

    def test_pixel_range_and_shape(self):
        spec = make_scene(64, ["red circle"], (1, 1), 0.02, seed=0)
        arr = render_scene(spec)
        assert arr.shape == (64, 64, 3)
        assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_deterministic(self):
        spec = make_scene(64, ["blue square"], (1, 2), 0.02, seed=3)
        assert np.array_equal(render_scene(spec), render_scene(spec))

    def test_dominant_channel_matches_color(self):
        spec = make_scene(64, ["red circle"], (1, 1), 0.0, seed=1)
        arr = render_scene(spec)
        fg = np.abs(arr - BACKGROUND).max(axis=-1) > 0.15
        mean = arr[fg].mean(axis=0)
        assert mean[0] > mean[1] and mean[0] > mean[2]


class TestRenderClassCrop:
    def test_shape_and_determinism(self):
        a = render_class_crop("green triangle", 32, seed=7)
        b = render_class_crop("green triangle", 32, seed=7)
        assert a.shape == (32, 32, 3)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = render_class_crop("green triangle", 32, seed=7)
        b = render_class_crop("green triangle", 32, seed=8)
        assert not np.array_equal(a, b)


class TestGenerateDataset:
    @pytest.fixture(scope="class")
    def dataset(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("data")
        return out, generate_dataset(out, num_train=6, num_val=4, seed=1)

    def test_counts_and_files(self, dataset):
        out, man = dataset
        assert len(man.train) == 6 and len(man.val) == 4
        assert (out / "train.json").exists() and (out / "val.json").exists()
        assert (out / "vocab.txt").exists()
        for rec in man.train + man.val:
            assert (out / rec.file_name).exists()

    def test_train_split_base_only(self, dataset):
        _, man = dataset
        man.check_train_split()  # must not raise
        novel = man.vocabulary.novel_ids
        assert all(a.class_index not in novel for r in man.train for a in r.annotations)

    def test_novel_split_violation_detected(self, dataset):
        _, man = dataset
        novel_id = next(iter(man.vocabulary.novel_ids))
        bad_rec = man.val[0]
        polluted = DatasetManifest(
            vocabulary=man.vocabulary,
            train=man.train
            + [
                type(bad_rec)(
                    image_id=999,
                    file_name=bad_rec.file_name,
                    width=64,
                    height=64,
                    annotations=[type(bad_rec.annotations[0] if bad_rec.annotations else man.train[0].annotations[0])(novel_id, (0.5, 0.5, 0.2, 0.2))],
                )
            ],
        )
        with pytest.raises(ValueError):
            polluted.check_train_split()

    def test_json_byte_identical_per_seed(self, tmp_path):
        generate_dataset(tmp_path / "a", num_train=3, num_val=2, seed=9)
        generate_dataset(tmp_path / "b", num_train=3, num_val=2, seed=9)
        assert (tmp_path / "a/train.json").read_bytes() == (tmp_path / "b/train.json").read_bytes()
        assert (tmp_path / "a/val.json").read_bytes() == (tmp_path / "b/val.json").read_bytes()

    def test_coco_round_trip(self, dataset):
        out, man = dataset
        vocab = man.vocabulary
        loaded = load_coco_annotations(out / "train.json", vocab)
        assert len(loaded) == len(man.train)
        for orig, back in zip(man.train, loaded):
            assert back.image_id == orig.image_id and back.file_name == orig.file_name
            assert len(back.annotations) == len(orig.annotations)
            for a, b in zip(orig.annotations, back.annotations):
                assert a.class_index == b.class_index
                for u, v in zip(a.box, b.box):
                    assert abs(u - v) < 1e-3  # coordinates rounded to 4 decimals in pixels

    def test_load_image_matches_canvas(self, dataset):
        out, man = dataset
        img = load_image(out, man.train[0])
        assert isinstance(img, torch.Tensor)
        assert img.shape == (64, 64, 3)
        assert float(img.min()) >= 0.0 and float(img.max()) <= 1.0

    def test_too_few_factors_rejected(self, tmp_path):
        vocab = Vocabulary(
            classes=["red circle", "red square"],
            base_ids=frozenset({0}),
            novel_ids=frozenset({1}),
        )
        with pytest.raises(ValueError):
            generate_dataset(tmp_path / "x", 1, 1, vocab=vocab)


class TestLoadCocoAnnotations:
    def make_minimal(self, tmp_path):
        doc = {
            "images": [{"id": 1, "file_name": "images/a.png", "width": 64, "height": 32}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 0, "bbox": [16.0, 8.0, 32.0, 16.0], "area": 512.0, "iscrowd": 0}
            ],
            "categories": [{"id": 0, "name": "red circle"}],
        }
        path = tmp_path / "mini.json"
        path.write_text(json.dumps(doc))
        return path

    def vocab(self):
        return Vocabulary(
            classes=["red circle", "blue square", "red square"],
            base_ids=frozenset({0, 1}),
            novel_ids=frozenset({2}),
        )

    def test_minimal_file_normalized_box(self, tmp_path):
        records = load_coco_annotations(self.make_minimal(tmp_path), self.vocab())
        assert len(records) == 1
        (a,) = records[0].annotations
        # xywh (16, 8, 32, 16) in a 64 x 32 image -> cxcywh (0.5, 0.5, 0.5, 0.5)
        assert a.box == (0.5, 0.5, 0.5, 0.5)
        assert a.class_index == 0

    def test_empty_annotations_valid(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text(json.dumps({"images": [], "annotations": [], "categories": []}))
        assert load_coco_annotations(path, self.vocab()) == []

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="malformed"):
            load_coco_annotations(path, self.vocab())

    def test_missing_section_rejected(self, tmp_path):
        path = tmp_path / "nosec.json"
        path.write_text(json.dumps({"images": []}))
        with pytest.raises(ValueError):
            load_coco_annotations(path, self.vocab())

    def test_unknown_category_rejected(self, tmp_path):
        doc = {
            "images": [{"id": 1, "file_name": "a.png", "width": 64, "height": 64}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 42, "bbox": [1, 1, 2, 2], "area": 4, "iscrowd": 0}
            ],
            "categories": [{"id": 42, "name": "purple blob"}],
        }
        path = tmp_path / "unknown.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="category"):
            load_coco_annotations(path, self.vocab())
