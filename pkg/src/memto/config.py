"""Model, training and run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    L: int = 100
    n: int = 1
    C: int = 64
    enc_layers: int = 3
    enc_heads: int = 8
    dec_layers: int = 2
    M: int = 10
    tau: float = 0.1
    dropout: float = 0.1

    def validate(self) -> None:
        if self.L < 1 or self.n < 1 or self.C < 1:
            raise ConfigError("L, n and C must be positive")
        if self.enc_heads < 1 or self.C % self.enc_heads:
            raise ConfigError(f"C={self.C} must be divisible by enc_heads={self.enc_heads}")
        if self.enc_layers < 1:
            raise ConfigError("enc_layers must be >= 1")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.dec_layers < 1:
            raise ConfigError("dec_layers must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass
class TrainConfig:
    lambda_: float = 0.01
    lr: float = 5e-5
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    kmeans_sample_frac: float = 0.10
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-4
    seed: int = 0
    skip_kmeans: bool = False
    loss_mode: str = "both"  # both | rec | entr

    def validate(self) -> None:
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0 < self.kmeans_sample_frac <= 1:
            raise ConfigError("kmeans_sample_frac must lie in (0, 1]")
        if self.loss_mode not in ("both", "rec", "entr"):
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    header: bool = False
    val_ratio: float = 0.8
    p_percent: float = 1.0
    out_dir: str = "runs/default"

    def to_flat(self) -> dict:
        flat = {}
        for k, v in asdict(self.model).items():
            flat[k] = v
        for k, v in asdict(self.train).items():
            flat["lambda" if k == "lambda_" else k] = v
        for f in fields(self):
            if f.name not in ("model", "train"):
                flat[f.name] = getattr(self, f.name)
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        model_keys = {f.name for f in fields(ModelConfig)}
        train_keys = {f.name for f in fields(TrainConfig)}
        run_keys = {f.name for f in fields(cls)} - {"model", "train"}
        m, t, r = {}, {}, {}
        for k, v in flat.items():
            key = "lambda_" if k == "lambda" else k
            if key in model_keys:
                m[key] = v
            elif key in train_keys:
                t[key] = v
            elif key in run_keys:
                r[key] = v
            else:
                raise ConfigError(f"unknown config key {k!r}")
        cfg = cls(ModelConfig(**m), TrainConfig(**t), **r)
        cfg.model.validate()
        cfg.train.validate()
        return cfg


def load_config(path) -> RunConfig:
    """Read a flat JSON object of config keys; unknown keys are rejected."""
    try:
        flat = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(flat, dict):
        raise ConfigError(f"{path}: expected a flat key-value object")
    for k, v in flat.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(f"{path}: key {k!r} must be a scalar")
    return RunConfig.from_flat(flat)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n")
