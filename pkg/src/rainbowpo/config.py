"""Experiment configuration: nested dataclasses with a JSON file form."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .core import ConfigurationError, canonical_json
from .dispersion import DispersionConfig
from .losses import LinkFunction, RainbowConfig
from .sampler import SamplerConfig
from .synth import Method
from .trainer import TrainConfig


@dataclass(frozen=True)
class WorldConfig:
    n: int = 12
    C: int = 8
    T_max: int = 16
    kappa: float = 0.05
    seed: int = 0
    ref_scale: float = 1.0  # std of the reference policy's logits
    init_scale: float = 0.1  # std of the perturbation that initialises the trainable policy

    def __post_init__(self) -> None:
        if self.n < 2 or self.C < 1 or self.T_max < 1:
            raise ConfigurationError("world needs n >= 2, C >= 1, T_max >= 1")
        if not (math.isfinite(self.kappa) and self.ref_scale >= 0 and self.init_scale >= 0):
            raise ConfigurationError("world scales must be finite and non-negative")


@dataclass(frozen=True)
class DataConfig:
    prompts: int = 500
    method: Method = Method.BEST_WORST_OF_K

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        if self.prompts < 1:
            raise ConfigurationError("data.prompts must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    n_eval: int = 2000
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.n_eval < 1:
            raise ConfigurationError("eval.n_eval must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigurationError("eval.holdout_fraction must lie in (0, 1)")


def _toy_train() -> TrainConfig:
    return TrainConfig(lr=1e-2, epochs=3, batch_size=8, warmup=0.1, optimizer="adam", seed=0)


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: RainbowConfig = field(default_factory=RainbowConfig)
    dispersion: DispersionConfig = field(default_factory=DispersionConfig)
    train: TrainConfig = field(default_factory=_toy_train)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return _plain(self)

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self,
            world=dataclasses.replace(self.world, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )

    def override(self, dotted: dict) -> "ExperimentConfig":
        """Apply ``{"loss.alpha": 0.25, "loss.link.kind": "square", ...}`` style overrides."""
        d = self.to_dict()
        for key, value in dotted.items():
            node = d
            parts = key.split(".")
            for part in parts[:-1]:
                if not isinstance(node, dict) or part not in node:
                    raise ConfigurationError(f"unknown config key {key!r}")
                node = node[part]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigurationError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return from_dict(d)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{cls.__name__} section must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{cls.__name__}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def load_config(path: Path | str) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data)


def save_config(cfg: ExperimentConfig, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


__all__ = [
    "DataConfig",
    "EvalConfig",
    "ExperimentConfig",
    "LinkFunction",
    "WorldConfig",
    "from_dict",
    "load_config",
    "save_config",
]
