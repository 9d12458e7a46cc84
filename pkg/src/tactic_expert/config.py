"""Run configuration with strict JSON parsing."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .transformer import ABLATION_FLAGS, Ablations


@dataclass
class Config:
    # data
    n_sequences: int = 250
    T: int = 20
    noise_sigma: float = 0.25
    tactics: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    test_fraction: float = 0.2
    augment: bool = True
    # model
    d_model: int = 64
    d: int = 32
    d_head: int = 32
    n_layers: int = 2
    k_eigs: int = 4
    window: int = 5
    n_patterns: int = 8
    kshape_max_iter: int = 100
    n_experts: int = 5
    router_hidden: int = 32
    # optimisation
    epochs: int = 200
    warmup_epochs: int = 5
    lr_warmup: float = 2e-5
    lr: float = 2e-3
    weight_decay: float = 0.01
    batch_size: int = 50
    stage2_epochs: int = 100
    stage2_lr: float = 2e-3
    tau: float = 0.1
    n_negatives: int = 5
    lambda_con: float = 0.5
    router_aux_weight: float = 0.1
    seed: int = 0
    ablations: list = field(default_factory=list)
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lr <= 0 or self.lr_warmup <= 0 or self.stage2_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.n_negatives < 1:
            raise ConfigError("n_negatives must be >= 1")
        if self.n_experts < 2:
            raise ConfigError("n_experts must be >= 2")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.T < max(2, self.window):
            raise ConfigError("T must be >= max(2, window)")
        if self.d > self.d_model:
            raise ConfigError("d must not exceed d_model")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must be in [0, 1)")
        bad = [f for f in self.ablations if f not in ABLATION_FLAGS]
        if bad:
            raise ConfigError(f"unknown ablation flags {bad}")

    @property
    def ablation_set(self) -> Ablations:
        return Ablations.from_flags(self.ablations)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Config":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "Config":
        return Config.from_dict({**self.to_dict(), **kw})
