"""Pipeline configuration: defaults, JSON loading, overrides and validation."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from .codecsim import RATE_LEVELS
from .core import MAX_DEPTH
from .errors import ConfigError
from .learner import TrainConfig, WmseConfig


@dataclass
class ModelConfig:
    epochs: int = 100
    lr: float = 3e-3
    batch_size: int = 512
    samples_per_epoch: int = 16384
    weight_decay: float = 0.01
    final_lr_ratio: float = 0.1

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                           samples_per_epoch=self.samples_per_epoch,
                           weight_decay=self.weight_decay, seed=seed,
                           final_lr_ratio=self.final_lr_ratio)


@dataclass
class PipelineConfig:
    depth: int = 10
    max_points: int = 100_000
    levels: List[str] = field(default_factory=lambda: list(RATE_LEVELS))
    k: int = 8
    neighbours: int = 8
    wmse: dict = field(default_factory=lambda: asdict(WmseConfig()))
    poge: ModelConfig = field(default_factory=ModelConfig)
    poae: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0

    @property
    def wmse_config(self) -> WmseConfig:
        return WmseConfig(**self.wmse)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "PipelineConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.depth, int) and 1 <= self.depth <= MAX_DEPTH,
             f"depth must be an integer in [1, {MAX_DEPTH}]")
        need(isinstance(self.max_points, int) and self.max_points >= 1,
             "max_points must be a positive integer")
        need(isinstance(self.levels, list) and self.levels, "levels must be a non-empty list")
        for name in self.levels:
            need(name in RATE_LEVELS, f"unknown rate level {name!r}")
        need(len(set(self.levels)) == len(self.levels), "rate levels repeat")
        need(isinstance(self.k, int) and self.k >= 1, "k must be a positive integer")
        need(isinstance(self.neighbours, int) and self.neighbours >= 1,
             "neighbours must be a positive integer")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        try:
            WmseConfig(**self.wmse)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"wmse: {exc}") from None
        for name in ("poge", "poae"):
            m = getattr(self, name)
            need(isinstance(m.epochs, int) and m.epochs >= 1, f"{name}.epochs must be >= 1")
            need(m.lr > 0, f"{name}.lr must be positive")
            need(isinstance(m.batch_size, int) and m.batch_size >= 1,
                 f"{name}.batch_size must be >= 1")
            need(isinstance(m.samples_per_epoch, int) and m.samples_per_epoch >= 1,
                 f"{name}.samples_per_epoch must be >= 1")
            need(m.weight_decay >= 0, f"{name}.weight_decay must be >= 0")
            need(0 < m.final_lr_ratio <= 1, f"{name}.final_lr_ratio must be in (0, 1]")
        return self


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def from_dict(data: dict) -> PipelineConfig:
    merged = _merge(PipelineConfig().to_dict(), data)
    try:
        cfg = PipelineConfig(**{k: v for k, v in merged.items() if k not in ("poge", "poae")},
                             poge=ModelConfig(**merged["poge"]),
                             poae=ModelConfig(**merged["poae"]))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides`` (dotted keys allowed)."""
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    merged = _merge(PipelineConfig().to_dict(), data)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        node = merged
        for p in parents:
            node = node[p]
        node[leaf] = value
    return from_dict(merged)
