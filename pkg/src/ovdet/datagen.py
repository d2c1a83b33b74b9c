"""Synthetic shape-composition dataset.

Classes are (color x shape) pairs. Novel classes are held-out combinations
whose color and shape both appear among the base classes, so zero-shot
transfer is about recombination, not unseen factors. Train scenes contain base
classes only; val scenes mix base and novel.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .pipeline import Vocabulary

COLORS = {
    "red": (230, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (235, 215, 50),
}
SHAPES = ("circle", "square", "triangle", "cross")

SUPERSAMPLE = 4
MAX_PAIRWISE_IOU = 0.3
PLACEMENT_RETRIES = 40


@dataclass(frozen=True)
class SceneSpec:
    canvas: int
    objects: list[tuple[str, tuple[float, float, float, float], float]]  # (class, cxcywh, rot)
    noise: float
    seed: int


@dataclass(frozen=True)
class AnnotationRecord:
    class_index: int
    box: tuple[float, float, float, float]  # normalized cxcywh


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_name: str
    width: int
    height: int
    annotations: list[AnnotationRecord]


@dataclass(frozen=True)
class DatasetManifest:
    vocabulary: Vocabulary
    train: list[ImageRecord] = field(default_factory=list)
    val: list[ImageRecord] = field(default_factory=list)
    root: Path | None = None

    def check_train_split(self) -> None:
        """Hard assertion: no novel-class annotation in the train split."""
        for rec in self.train:
            for ann in rec.annotations:
                if ann.class_index in self.vocabulary.novel_ids:
                    raise ValueError(
                        f"novel class {ann.class_index} found in train image {rec.image_id}"
                    )


def default_vocabulary() -> Vocabulary:
    """4 colors x 4 shapes; one novel combination per color and per shape."""
    classes = [f"{c} {s}" for c in COLORS for s in SHAPES]
    novel = {f"{c} {s}" for c, s in zip(COLORS, SHAPES)}  # diagonal combos
    novel_ids = frozenset(i for i, name in enumerate(classes) if name in novel)
    base_ids = frozenset(range(len(classes))) - novel_ids
    return Vocabulary(classes, base_ids, novel_ids)


def _shape_polygon(shape: str, cx: float, cy: float, r: float, rot: float):
    """Vertices (supersampled pixel space) for polygonal shapes; None for circle."""
    if shape == "circle":
        return None
    if shape == "square":
        angles = [rot + math.pi / 4 + i * math.pi / 2 for i in range(4)]
    elif shape == "triangle":
        angles = [rot - math.pi / 2 + i * 2 * math.pi / 3 for i in range(3)]
    elif shape == "cross":
        pts = []
        t = 0.38  # arm half-width as a fraction of r
        for i in range(4):
            a = rot + i * math.pi / 2
            for dx, dy in ((t, 1), (-t, 1), (-t, t)):
                px, py = dx * r, dy * r
                pts.append(
                    (
                        cx + px * math.cos(a) - py * math.sin(a),
                        cy + px * math.sin(a) + py * math.cos(a),
                    )
                )
        return pts
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return [(cx + r * math.cos(a), cy + r * math.sin(a)) for a in angles]


def _shape_bbox(shape: str, cx: float, cy: float, r: float, rot: float):
    if shape == "circle":
        return cx - r, cy - r, cx + r, cy + r
    pts = _shape_polygon(shape, cx, cy, r, rot)
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    return min(xs), min(ys), max(xs), max(ys)


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / area if area > 0 else 0.0


def make_scene(
    canvas: int,
    class_names: list[str],
    num_objects: tuple[int, int],
    noise: float,
    seed: int,
) -> SceneSpec:
    """Sample object classes and non-overlapping placements; deterministic per seed.

    If a scene cannot be placed within the retry budget, it is regenerated from
    a derived seed.
    """
    for attempt in range(100):
        rng = random.Random(seed * 1000003 + attempt)
        n = rng.randint(*num_objects)
        objects, bboxes = [], []
        ok = True
        for _ in range(n):
            cls = rng.choice(class_names)
            for _ in range(PLACEMENT_RETRIES):
                r = rng.uniform(0.10, 0.22) * canvas
                rot = rng.uniform(-0.26, 0.26)
                cx = rng.uniform(1.3 * r, canvas - 1.3 * r)
                cy = rng.uniform(1.3 * r, canvas - 1.3 * r)
                bbox = _shape_bbox(cls.split()[1], cx, cy, r, rot)
                if bbox[0] < 1 or bbox[1] < 1 or bbox[2] > canvas - 1 or bbox[3] > canvas - 1:
                    continue
                if all(_iou(bbox, other) <= MAX_PAIRWISE_IOU for other in bboxes):
                    break
            else:
                ok = False
                break
            bboxes.append(bbox)
            box = (
                (bbox[0] + bbox[2]) / 2 / canvas,
                (bbox[1] + bbox[3]) / 2 / canvas,
                (bbox[2] - bbox[0]) / canvas,
                (bbox[3] - bbox[1]) / canvas,
            )
            objects.append((cls, box, rot))
        if ok:
            return SceneSpec(
                canvas=canvas, objects=objects, noise=noise, seed=seed * 1000003 + attempt
            )
    raise RuntimeError(f"could not place objects for seed {seed}")


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Anti-aliased render (supersample + box downsample); H x W x 3 floats in [0, 1]."""
    s = SUPERSAMPLE
    size = spec.canvas * s
    img = Image.new("RGB", (size, size), (110, 110, 110))
    draw = ImageDraw.Draw(img)
    for cls, (bcx, bcy, bw, bh), rot in spec.objects:
        color_name, shape = cls.split()
        # Recover supersampled geometry from the normalized bbox.
        x1, y1 = (bcx - bw / 2) * size, (bcy - bh / 2) * size
        x2, y2 = (bcx + bw / 2) * size, (bcy + bh / 2) * size
        r = _fit_radius(shape, x2 - x1, y2 - y1, rot)
        cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
        # Recenter so the shape's bbox coincides with the annotation bbox.
        sx1, sy1, sx2, sy2 = _shape_bbox(shape, cx, cy, r, rot)
        cx += (x1 + x2) / 2 - (sx1 + sx2) / 2
        cy += (y1 + y2) / 2 - (sy1 + sy2) / 2
        color = COLORS[color_name]
        if shape == "circle":
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
        else:
            draw.polygon(_shape_polygon(shape, cx, cy, r, rot), fill=color)
    img = img.resize((spec.canvas, spec.canvas), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if spec.noise > 0:
        rng = np.random.RandomState(spec.seed % (2**31))
        arr = np.clip(arr + rng.normal(0.0, spec.noise, arr.shape).astype(np.float32), 0.0, 1.0)
    return arr


def _fit_radius(shape: str, bw: float, bh: float, rot: float) -> float:
    """Radius whose rendered bbox matches the requested bbox extents."""
    ref = _shape_bbox(shape, 0.0, 0.0, 1.0, rot)
    return min(bw / (ref[2] - ref[0]), bh / (ref[3] - ref[1]))


def generate_dataset(
    out_dir: str | Path,
    num_train: int,
    num_val: int,
    vocab: Vocabulary | None = None,
    seed: int = 0,
    canvas: int = 64,
    num_objects: tuple[int, int] = (1, 3),
    noise: float = 0.02,
) -> DatasetManifest:
    """Render train/val scenes and write COCO-format annotations + vocab file."""
    vocab = vocab or default_vocabulary()
    colors = {name.split()[0] for name in vocab.classes}
    shapes = {name.split()[1] for name in vocab.classes}
    if len(colors) < 3 or len(shapes) < 3:
        raise ValueError("need at least 3 colors and 3 shapes")
    base_names = [vocab.classes[i] for i in sorted(vocab.base_ids)]
    novel_names = [vocab.classes[i] for i in sorted(vocab.novel_ids)]
    if len(novel_names) < 2:
        raise ValueError("need at least 2 novel classes")
    for name in novel_names:
        c, s = name.split()
        if not any(b.split()[0] == c for b in base_names) or not any(
            b.split()[1] == s for b in base_names
        ):
            raise ValueError(f"novel class {name!r} has a factor absent from base classes")

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    class_index = {name: i for i, name in enumerate(vocab.classes)}

    def build_split(split: str, count: int, names: list[str], seed_offset: int) -> list[ImageRecord]:
        records = []
        for i in range(count):
            spec = make_scene(canvas, names, num_objects, noise, seed * 7919 + seed_offset + i)
            arr = render_scene(spec)
            file_name = f"images/{split}_{i:05d}.png"
            Image.fromarray((arr * 255).round().astype(np.uint8)).save(out / file_name)
            image_id = seed_offset + i
            anns = [
                AnnotationRecord(class_index=class_index[cls], box=box)
                for cls, box, _ in spec.objects
            ]
            records.append(ImageRecord(image_id, file_name, canvas, canvas, anns))
        return records

    train = build_split("train", num_train, base_names, 0)
    val = build_split("val", num_val, list(vocab.classes), 1_000_000)
    for split, records in (("train", train), ("val", val)):
        _write_coco(out / f"{split}.json", records, vocab)
    manifest = DatasetManifest(vocabulary=vocab, train=train, val=val, root=out)
    manifest.check_train_split()
    return manifest


def _write_coco(path: Path, records: list[ImageRecord], vocab: Vocabulary) -> None:
    images, annotations = [], []
    ann_id = 1
    for rec in records:
        images.append(
            {"id": rec.image_id, "file_name": rec.file_name, "width": rec.width, "height": rec.height}
        )
        for ann in rec.annotations:
            cx, cy, w, h = ann.box
            bbox = [
                round((cx - w / 2) * rec.width, 4),
                round((cy - h / 2) * rec.height, 4),
                round(w * rec.width, 4),
                round(h * rec.height, 4),
            ]
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": rec.image_id,
                    "category_id": ann.class_index,
                    "bbox": bbox,
                    "area": round(bbox[2] * bbox[3], 4),
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i, "name": name} for i, name in enumerate(vocab.classes)],
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_coco_annotations(path: str | Path, vocab: Vocabulary) -> list[ImageRecord]:
    """Read a COCO-format annotation file into image records (normalized boxes)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed COCO JSON at {path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise ValueError(f"COCO JSON missing {key!r} section")
    cat_names = {c["id"]: c["name"] for c in doc["categories"]}
    index_of = {name: i for i, name in enumerate(vocab.classes)}
    by_image: dict[int, list[AnnotationRecord]] = {img["id"]: [] for img in doc["images"]}
    dims = {img["id"]: (img["width"], img["height"]) for img in doc["images"]}
    for ann in doc["annotations"]:
        cid = ann["category_id"]
        if cid not in cat_names or cat_names[cid] not in index_of:
            raise ValueError(f"unknown category id {cid}")
        w, h = dims[ann["image_id"]]
        x, y, bw, bh = ann["bbox"]
        box = ((x + bw / 2) / w, (y + bh / 2) / h, bw / w, bh / h)
        by_image[ann["image_id"]].append(AnnotationRecord(index_of[cat_names[cid]], box))
    return [
        ImageRecord(
            img["id"], img["file_name"], img["width"], img["height"], by_image[img["id"]]
        )
        for img in doc["images"]
    ]


def load_image(root: Path, rec: ImageRecord) -> torch.Tensor:
    arr = np.asarray(Image.open(root / rec.file_name).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def render_class_crop(class_name: str, size: int, seed: int, noise: float = 0.02) -> np.ndarray:
    """Single centered-ish shape on noise, for CLIP pretraining crops."""
    rng = random.Random(seed)
    r = rng.uniform(0.22, 0.40) * size
    rot = rng.uniform(-0.26, 0.26)
    shape = class_name.split()[1]
    bbox = _shape_bbox(shape, 0, 0, r, rot)
    cx = rng.uniform(-bbox[0] + 1, size - bbox[2] - 1)
    cy = rng.uniform(-bbox[1] + 1, size - bbox[3] - 1)
    x1, y1, x2, y2 = _shape_bbox(shape, cx, cy, r, rot)
    box = ((x1 + x2) / 2 / size, (y1 + y2) / 2 / size, (x2 - x1) / size, (y2 - y1) / size)
    spec = SceneSpec(canvas=size, objects=[(class_name, box, rot)], noise=noise, seed=seed)
    return render_scene(spec)
