"""Command-line entry point: gen | pretrain | train | detect | eval | bench."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, build_clip, build_detector, load_run_config, seeded
from .datagen import (
    DatasetManifest,
    default_vocabulary,
    generate_dataset,
    load_coco_annotations,
    load_image,
)
from .bench import bench_clip_stage, bench_decode_scaling
from .encoder import ImageSample
from .metrics import evaluate
from .pipeline import Detection, PipelineModels, Vocabulary, detect, to_coco_results
from .training import pretrain_clip, train_detector


def _load_vocab(cfg: RunConfig) -> Vocabulary:
    vocab_file = Path(cfg.paths.data_dir) / "vocab.txt"
    return Vocabulary.load(vocab_file) if vocab_file.exists() else default_vocabulary()


def cmd_gen(cfg: RunConfig, out: str | None) -> int:
    out_dir = out or cfg.paths.data_dir
    manifest = generate_dataset(
        out_dir,
        num_train=cfg.data.num_train,
        num_val=cfg.data.num_val,
        seed=cfg.seed,
        canvas=cfg.data.canvas,
        num_objects=(cfg.data.min_objects, cfg.data.max_objects),
        noise=cfg.data.noise,
    )
    print(f"generated {len(manifest.train)} train / {len(manifest.val)} val images in {out_dir}")
    return 0


def cmd_pretrain(cfg: RunConfig, out: str | None) -> int:
    vocab = _load_vocab(cfg)
    model = build_clip(cfg, vocab)
    stats = pretrain_clip(model, vocab, seeded(cfg.pretrain, cfg.seed))
    path = out or cfg.paths.clip_checkpoint
    save_checkpoint(path, "clip", seeded(cfg.clip, cfg.seed), model)
    print(f"clip checkpoint -> {path}  holdout_top1={stats['holdout_top1']:.3f}")
    return 0


def _load_manifest(cfg: RunConfig) -> DatasetManifest:
    root = Path(cfg.paths.data_dir)
    if not (root / "train.json").exists():
        raise FileNotFoundError(f"no dataset at {root}; run `ovdet gen` first")
    vocab = Vocabulary.load(root / "vocab.txt")
    return DatasetManifest(
        vocabulary=vocab,
        train=load_coco_annotations(root / "train.json", vocab),
        val=load_coco_annotations(root / "val.json", vocab),
        root=root,
    )


def _load_models(cfg: RunConfig, vocab: Vocabulary) -> PipelineModels:
    clip_model = build_clip(cfg, vocab)
    _, state = load_checkpoint(cfg.paths.clip_checkpoint, "clip")
    clip_model.load_state_dict(state)
    clip_model.eval()
    detector = build_detector(cfg)
    _, state = load_checkpoint(cfg.paths.detector_checkpoint, "detector")
    detector.load_state_dict(state)
    detector.eval()
    return PipelineModels(detector=detector, clip=clip_model)


def cmd_train(cfg: RunConfig, out: str | None) -> int:
    manifest = _load_manifest(cfg)
    clip_model = build_clip(cfg, manifest.vocabulary)
    _, state = load_checkpoint(cfg.paths.clip_checkpoint, "clip")
    clip_model.load_state_dict(state)
    detector = build_detector(cfg)
    out_dir = out or cfg.paths.detector_dir
    history = train_detector(
        manifest, detector, clip_model, cfg.loss, seeded(cfg.train, cfg.seed), out_dir
    )
    print(f"trained {len(history)} steps; final loss {history[-1]['total']:.4f} -> {out_dir}")
    return 0


def cmd_detect(cfg: RunConfig, images: str, out: str | None) -> int:
    manifest = _load_manifest(cfg)
    vocab = manifest.vocabulary
    models = _load_models(cfg, vocab)
    source = Path(images)
    if source.suffix == ".json":
        records = load_coco_annotations(source, vocab)
        samples = [
            ImageSample(load_image(Path(cfg.paths.data_dir), rec), rec.image_id) for rec in records
        ]
    else:
        paths = sorted(source.glob("*.png")) if source.is_dir() else [source]
        if not paths:
            raise FileNotFoundError(f"no images found at {images}")
        from .datagen import ImageRecord

        samples = [
            ImageSample(load_image(p.parent, ImageRecord(i, p.name, 0, 0, [])), i)
            for i, p in enumerate(paths)
        ]
    detections: list[Detection] = []
    for sample in samples:
        detections.extend(
            detect(
                sample,
                vocab,
                models,
                cfg.ensemble,
                score_floor=cfg.detect.score_floor,
                top_n=cfg.detect.top_n,
            )
        )
    out_path = Path(out or Path(cfg.paths.out_dir) / "results.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(to_coco_results(detections), indent=1))
    print(f"{len(detections)} detections over {len(samples)} images -> {out_path}")
    return 0


def cmd_eval(cfg: RunConfig, results: str, annotations: str, out: str | None) -> int:
    vocab = _load_vocab(cfg)
    records = load_coco_annotations(annotations, vocab)
    detections = [
        Detection(
            box=(r["bbox"][0], r["bbox"][1], r["bbox"][0] + r["bbox"][2], r["bbox"][1] + r["bbox"][3]),
            class_index=r["category_id"],
            score=r.get("score", 1.0),
            image_id=r["image_id"],
        )
        for r in json.loads(Path(results).read_text())
    ]
    report = evaluate(detections, records, vocab)
    out_path = Path(out or Path(cfg.paths.out_dir) / "eval_report.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report.to_dict(), indent=1))
    print(
        f"mAP50 all={report.map50_all:.3f} base={report.map50_base:.3f} "
        f"novel={report.map50_novel:.3f} -> {out_path}"
    )
    return 0


def cmd_bench(cfg: RunConfig, out: str | None) -> int:
    bench = seeded(cfg.bench, cfg.seed)
    decode_report = bench_decode_scaling(m=cfg.decoder.m, d=cfg.decoder.d, bench=bench)
    clip_report = bench_clip_stage(bench=bench)
    out_path = Path(out or Path(cfg.paths.out_dir) / "bench_report.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        json.dumps({"decode": decode_report.to_dict(), "clip_stage": clip_report.to_dict()}, indent=1)
    )
    ratios = decode_report.derived["ratio"]
    print(f"decode ratios {ratios}; pruning {clip_report.derived.get('pruning_speedup')} -> {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovdet", description=__doc__)
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument(
        "--set", action="append", default=[], metavar="K=V", help="dotted config override (repeatable)"
    )
    parser.add_argument("--out", default=None, help="output file or directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", help="generate the synthetic dataset")
    sub.add_parser("pretrain", help="contrastively pretrain the CLIP stand-in")
    sub.add_parser("train", help="train the detector on base classes")
    p = sub.add_parser("detect", help="run detection over images")
    p.add_argument("images", help="image file, directory, or COCO annotation JSON")
    p = sub.add_parser("eval", help="evaluate detection results")
    p.add_argument("results", help="COCO-results JSON from `detect`")
    p.add_argument("annotations", help="COCO annotation JSON with ground truth")
    sub.add_parser("bench", help="run the decode/CLIP-stage benchmarks")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.set, args.seed)
        torch.manual_seed(cfg.seed)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "detect":
            return cmd_detect(cfg, args.images, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.results, args.annotations, args.out)
        if args.command == "bench":
            return cmd_bench(cfg, args.out)
        raise ValueError(f"unknown command {args.command}")
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
