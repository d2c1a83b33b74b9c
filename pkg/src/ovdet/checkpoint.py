"""Checkpoint serialization shared by all models: a binary blob with a format
version tag and the originating config embedded next to the weights."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch
import torch.nn as nn

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, kind: str, config, model: nn.Module) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": FORMAT_VERSION,
            "kind": kind,
            "config": asdict(config) if not isinstance(config, dict) else config,
            "state": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path, kind: str) -> tuple[dict, dict]:
    """Return (config dict, state dict); raises on version or kind mismatch."""
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, weights_only=True)
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint version {blob.get('format_version')} != supported {FORMAT_VERSION}"
        )
    if blob.get("kind") != kind:
        raise ValueError(f"checkpoint kind {blob.get('kind')!r}, expected {kind!r}")
    return blob["config"], blob["state"]
