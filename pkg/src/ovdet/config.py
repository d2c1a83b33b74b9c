"""Run configuration: one YAML tree covering every module, validated on load.

Unknown keys are rejected; `--set a.b.c=value` style overrides are applied on
top of the file. Component seeds are offset by the global run seed so a single
`--seed` flag re-seeds the whole pipeline.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import yaml

from .bench import BenchConfig
from .clip import ClipConfig, ClipModel
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig
from .losses import LossWeights
from .pipeline import EnsembleConfig, OpenVocabDetector, Vocabulary
from .training import PretrainConfig, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    num_train: int = 500
    num_val: int = 100
    canvas: int = 64
    min_objects: int = 1
    max_objects: int = 3
    noise: float = 0.02


@dataclass(frozen=True)
class DetectConfig:
    score_floor: float = 0.05
    top_n: int = 300


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs"
    data_dir: str = "runs/data"
    clip_checkpoint: str = "runs/clip.pt"
    detector_dir: str = "runs/detector"
    detector_checkpoint: str = "runs/detector/detector_final.pt"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    clip: ClipConfig = field(default_factory=ClipConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    data: DataConfig = field(default_factory=DataConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section {path or 'root'} must be a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys at {path or 'root'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = f.type if is_dataclass(f.type) else _resolve(f)
        if sub is not None:
            kwargs[name] = _from_dict(sub, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _resolve(f: dataclasses.Field):
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    return type(default) if is_dataclass(default) else None


def load_run_config(path: str | Path | None, overrides: list[str] | None = None, seed: int | None = None) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus key=value overrides."""
    data = {}
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
    cfg = _from_dict(RunConfig, data, "")
    for item in overrides or []:
        cfg = apply_override(cfg, item)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def apply_override(cfg: RunConfig, item: str) -> RunConfig:
    """Apply one dotted `a.b.c=value` override; values parsed as YAML scalars."""
    if "=" not in item:
        raise ValueError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    parts = key.split(".")

    def rec(obj, parts):
        name = parts[0]
        if not any(f.name == name for f in fields(obj)):
            raise ValueError(f"unknown config key {key!r}")
        if len(parts) == 1:
            return replace(obj, **{name: value})
        return replace(obj, **{name: rec(getattr(obj, name), parts[1:])})

    return rec(cfg, parts)


def seeded(component_cfg, run_seed: int):
    """Offset a component config's seed by the run seed."""
    if run_seed == 0 or not hasattr(component_cfg, "seed"):
        return component_cfg
    return replace(component_cfg, seed=component_cfg.seed + 1000 * run_seed)


def build_clip(cfg: RunConfig, vocab: Vocabulary) -> ClipModel:
    return ClipModel(seeded(cfg.clip, cfg.seed), vocab.words())


def build_detector(cfg: RunConfig) -> OpenVocabDetector:
    encoder = Encoder(seeded(cfg.encoder, cfg.seed))
    decoder = Decoder(seeded(cfg.decoder, cfg.seed))
    return OpenVocabDetector(encoder, decoder, clip_width=cfg.clip.d_prime, proj_seed=3 + cfg.seed)
