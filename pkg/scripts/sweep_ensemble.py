#!/usr/bin/env python3
"""Sweep the ensemble mixing exponents over a trained run directory.

Usage: python3 scripts/sweep_ensemble.py RUN_DIR [--alphas 0.2,1.0] [--betas 0.2,0.4,0.6,1.0]

For every (alpha, beta) pair this re-runs detection on the validation split and
reports base/novel mAP50, so you can see how much leaning on the image-text
model helps novel classes.
"""

import argparse
import json
import tempfile
from pathlib import Path

from ovdet.cli import main as ovdet


def run(out_dir: Path, run_dir: Path, alpha: float, beta: float) -> dict:
    common = [
        "--set", f"paths.out_dir={run_dir}",
        "--set", f"paths.data_dir={run_dir}/data",
        "--set", f"paths.clip_checkpoint={run_dir}/clip.pt",
        "--set", f"paths.detector_checkpoint={run_dir}/det/detector_final.pt",
        "--set", f"ensemble.alpha={alpha}",
        "--set", f"ensemble.beta={beta}",
    ]
    results = out_dir / f"results_a{alpha}_b{beta}.json"
    report = out_dir / f"eval_a{alpha}_b{beta}.json"
    val = str(run_dir / "data" / "val.json")
    if ovdet(common + ["--out", str(results), "detect", val]):
        raise SystemExit(f"detect failed for alpha={alpha} beta={beta}")
    if ovdet(common + ["--out", str(report), "eval", str(results), val]):
        raise SystemExit(f"eval failed for alpha={alpha} beta={beta}")
    return json.loads(report.read_text())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", type=Path, help="directory produced by scripts/run_pipeline.sh")
    ap.add_argument("--alphas", default="0.2,1.0")
    ap.add_argument("--betas", default="0.2,0.4,0.6,1.0")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        print(f"{'alpha':>6} {'beta':>6} {'base':>7} {'novel':>7} {'all':>7}")
        for alpha in (float(x) for x in args.alphas.split(",")):
            for beta in (float(x) for x in args.betas.split(",")):
                rep = run(Path(tmp), args.run_dir, alpha, beta)
                print(
                    f"{alpha:6.2f} {beta:6.2f} {rep['map50_base']:7.3f} "
                    f"{rep['map50_novel']:7.3f} {rep['map50_all']:7.3f}"
                )


if __name__ == "__main__":
    main()
