"""Wall-time benchmarks for the decoding-cost and RoI-scoring-cost trends.

All timing runs are single-threaded; reports echo the configuration and the
iteration counts so thresholds can be judged against the reported noise.
"""

from __future__ import annotations

import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import torch

from .clip import ClipConfig, ClipModel, clip_probs
from .decoder import Decoder, DecoderConfig, PromptSet
from .encoder import ImageSample, PatchGrid


@dataclass(frozen=True)
class BenchConfig:
    iterations: int = 100
    warmup: int = 5
    seed: int = 20


@dataclass(frozen=True)
class StageTiming:
    name: str
    mean_s: float
    std_s: float
    iterations: int
    warmup: int


@dataclass
class BenchReport:
    config: dict
    timings: list[StageTiming] = field(default_factory=list)
    derived: dict = field(default_factory=dict)

    def mean(self, name: str) -> float:
        for t in self.timings:
            if t.name == name:
                return t.mean_s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "timings": [asdict(t) for t in self.timings],
            "derived": self.derived,
        }


@contextmanager
def single_threaded():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def time_stage(fn, iterations: int, warmup: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.fmean(samples), statistics.pstdev(samples)


def bench_decode_scaling(
    k_values: tuple[int, ...] = (10, 100, 1000),
    m: int = 100,
    d: int = 64,
    num_layers: int = 3,
    n_memory: int = 64,
    bench: BenchConfig = BenchConfig(),
) -> BenchReport:
    """Time prompt-mode vs conditional-mode decoding as the class count grows.

    derived["ratio"][k] = t_conditional / t_prompt.
    """
    cfg = DecoderConfig(m=m, d=d, num_layers=num_layers, ffn_mult=2, mode="prompt", seed=bench.seed)
    decoder = Decoder(cfg).eval()
    gen = torch.Generator().manual_seed(bench.seed)
    memory = PatchGrid(torch.randn(n_memory, d, generator=gen), 1, n_memory)
    report = BenchReport(
        config={
            "k_values": list(k_values),
            "m": m,
            "d": d,
            "num_layers": num_layers,
            "n_memory": n_memory,
            **asdict(bench),
        }
    )
    ratios = {}
    with single_threaded(), torch.inference_mode():
        for k in k_values:
            prompts = PromptSet(torch.randn(k, d, generator=gen), list(range(k)))
            mean_p, std_p = time_stage(
                lambda: decoder.decode_prompt(prompts, memory), bench.iterations, bench.warmup
            )
            mean_c, std_c = time_stage(
                lambda: decoder.decode_conditional(prompts, memory), bench.iterations, bench.warmup
            )
            report.timings.append(StageTiming(f"prompt_k{k}", mean_p, std_p, bench.iterations, bench.warmup))
            report.timings.append(
                StageTiming(f"conditional_k{k}", mean_c, std_c, bench.iterations, bench.warmup)
            )
            ratios[k] = mean_c / mean_p
    report.derived["ratio"] = ratios
    return report


# Timing-oriented CLIP geometry: masking at the first of two wide layers keeps
# the shared patch-stream share of the work small relative to the per-RoI
# share, isolating the m-scaling of the RoI stage.
BENCH_CLIP = ClipConfig(
    input_size=16,
    patch_size=8,
    d_prime=384,
    num_layers=2,
    num_heads=4,
    masked_attention_layer_index=1,
    seed=21,
)


def bench_clip_stage(
    m: int = 128,
    keep_fractions: tuple[float, ...] = (1.0, 0.2),
    naive_m: int = 64,
    k_classes: int = 16,
    clip_cfg: ClipConfig = BENCH_CLIP,
    bench: BenchConfig = BenchConfig(),
) -> BenchReport:
    """Time the CLIP scoring stage (masked single pass + probabilities) at
    several pruning fractions, plus the naive per-RoI crop loop for contrast."""
    words = [f"w{i}" for i in range(k_classes)]
    model = ClipModel(clip_cfg, words).eval()
    gen = torch.Generator().manual_seed(bench.seed)
    image = ImageSample(torch.rand(clip_cfg.input_size, clip_cfg.input_size, 3, generator=gen))
    boxes = torch.stack(
        [
            torch.rand(m, 2, generator=gen) * 0.6 + 0.2,  # centers
            torch.rand(m, 2, generator=gen) * 0.3 + 0.1,  # sizes
        ],
        dim=1,
    ).reshape(m, 4)
    with torch.no_grad():
        text = torch.stack([model.encode_text(w) for w in words])

    report = BenchReport(
        config={
            "m": m,
            "keep_fractions": list(keep_fractions),
            "naive_m": naive_m,
            "k_classes": k_classes,
            "clip": asdict(clip_cfg),
            **asdict(bench),
        }
    )

    def rma_stage(rois):
        emb = model.encode_image_rois(image, rois)
        return clip_probs(emb, text, clip_cfg.temperature)

    with single_threaded(), torch.inference_mode():
        for frac in keep_fractions:
            kept = boxes[: max(1, round(m * frac))]
            mean, std = time_stage(lambda: rma_stage(kept), bench.iterations, bench.warmup)
            report.timings.append(
                StageTiming(f"rma_keep{frac:g}", mean, std, bench.iterations, bench.warmup)
            )

        naive_boxes = boxes[:naive_m]
        mean, std = time_stage(
            lambda: torch.stack([model.naive_crop_embed(image, b) for b in naive_boxes]),
            max(1, bench.iterations // 10),
            bench.warmup,
        )
        report.timings.append(
            StageTiming(f"naive_m{naive_m}", mean, std, max(1, bench.iterations // 10), bench.warmup)
        )
        mean, std = time_stage(
            lambda: rma_stage(naive_boxes), bench.iterations, bench.warmup
        )
        report.timings.append(
            StageTiming(f"rma_m{naive_m}", mean, std, bench.iterations, bench.warmup)
        )
        mean, std = time_stage(lambda: model.encode_image(image), bench.iterations, bench.warmup)
        report.timings.append(
            StageTiming("single_image", mean, std, bench.iterations, bench.warmup)
        )

    if 1.0 in keep_fractions:
        base = report.mean("rma_keep1")
        report.derived["pruning_speedup"] = {
            f"{frac:g}": base / report.mean(f"rma_keep{frac:g}") for frac in keep_fractions
        }
    report.derived["naive_over_rma"] = report.mean(f"naive_m{naive_m}") / report.mean(
        f"rma_m{naive_m}"
    )
    return report
