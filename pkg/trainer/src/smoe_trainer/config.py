"""Flat key=value training-config files."""

from __future__ import annotations

from pathlib import Path

from .train import TrainConfig

_INT_FIELDS = {"block_size", "epochs", "batch", "width_scale", "crop_size",
               "max_blocks", "seed", "fixture_count", "distill_epochs",
               "distill_fit_steps"}
_FLOAT_FIELDS = {"learning_rate", "noise_variance", "val_fraction", "distill_lr"}
_BOOL_FIELDS = {"resume"}


def parse_config_text(text: str) -> TrainConfig:
    config = TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        value = value.strip()
        if not hasattr(config, key):
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in _INT_FIELDS:
            setattr(config, key, int(value))
        elif key in _FLOAT_FIELDS:
            setattr(config, key, float(value))
        elif key in _BOOL_FIELDS:
            setattr(config, key, value.lower() in ("1", "true", "yes", "on"))
        else:
            setattr(config, key, value)
    return config


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
