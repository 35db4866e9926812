"""Run configuration for the CLI: one canonical JSON file, flag overrides,
and named hyperparameter presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import LEVELS
from .encoder import EncoderConfig
from .training import TrainConfig

RESAMPLE_MODES = ("none", "over", "under")

# Optimizer/pooling/position presets matching the reference fine-tuning
# recipes of the two model families; encoder size stays whatever the config
# says. The desk rate is what a from-scratch miniature model actually needs.
PRESETS = {
    "desk": {"train": {"learning_rate": 1e-3}},
    "bert-base": {
        "train": {"learning_rate": 5e-5, "pooling": "cls"},
        "encoder": {"position_scheme": "absolute"},
    },
    "xlnet-base": {
        "train": {"learning_rate": 2e-5, "pooling": "mean"},
        "encoder": {"position_scheme": "relative"},
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs; ``seed`` is the master seed from which
    the split/holdout/init/training streams are derived."""

    train_tsv: str = ""
    test_tsv: str | None = None
    level: str = "A"
    split_mode: str = "file"
    split_ratio: float = 0.8
    holdout_frac: float = 0.1
    resample_mode: str = "none"
    min_freq: int = 1
    max_vocab: int = 30000
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    out_dir: str = "out"
    seed: int = 13

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level!r}")
        if self.split_mode not in ("file", "ratio"):
            raise ValueError(f"split_mode must be 'file' or 'ratio'")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0,1)")
        if not 0.0 < self.holdout_frac < 1.0:
            raise ValueError("holdout_frac must be in (0,1)")
        if self.resample_mode not in RESAMPLE_MODES:
            raise ValueError(f"resample_mode must be one of {RESAMPLE_MODES}")
        if self.min_freq < 1:
            raise ValueError("min_freq must be >= 1")
        if self.max_vocab < 6:
            raise ValueError("max_vocab must leave room beyond the special tokens")


def to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["encoder"] = dataclasses.asdict(cfg.encoder)
    d["train"] = dataclasses.asdict(cfg.train)
    d["train"]["betas"] = list(cfg.train.betas)
    return d


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    enc = d.pop("encoder", {})
    tr = dict(d.pop("train", {}))
    if "betas" in tr:
        tr["betas"] = tuple(tr["betas"])
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"encoder", "train"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(encoder=EncoderConfig(**enc), train=TrainConfig(**tr), **d)


def to_json(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> RunConfig:
    return from_dict(json.loads(text))


def load_config(path: str | Path) -> RunConfig:
    return from_json(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(to_json(cfg), encoding="utf-8")


def apply_preset(cfg: RunConfig, preset: str) -> RunConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[preset]
    enc = dataclasses.replace(cfg.encoder, **spec.get("encoder", {}))
    tr = dataclasses.replace(cfg.train, **spec.get("train", {}))
    return dataclasses.replace(cfg, encoder=enc, train=tr)
