"""Experiment configuration: YAML in, validated dataclasses out.

Every section rejects unknown keys.  ``dump`` writes the fully expanded
config, so ``parse(dump(parse(text)))`` equals ``parse(text)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .ais import AisConfig
from .inference import InferenceConfig
from .optim import TrainConfig
from .solver import SolverConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple[int, ...] = (784, 400, 100)
    offsets: str = "data_mean"
    weight_scale: float = 0.01

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(n < 1 for n in self.layer_sizes):
            raise ValueError("layer_sizes needs a visible layer and at least one hidden layer")
        if self.offsets not in ("data_mean", "zero"):
            raise ValueError("offsets must be 'data_mean' or 'zero'")


@dataclass(frozen=True)
class DataSpec:
    kind: str = "bars_stripes"
    train_path: str | None = None
    test_path: str | None = None
    threshold: float = 0.5
    subset: int | None = None
    size: int = 64
    test_size: int = 0
    shape: tuple[int, int] = (3, 4)
    p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("idx", "bars_stripes", "random_bernoulli"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.kind == "idx" and not self.train_path:
            raise ValueError("idx data needs train_path")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "runs/default"
    eval_every: int = 1
    checkpoint_every: int = 10
    clock: str = "process"

    def __post_init__(self):
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise ValueError("eval_every and checkpoint_every must be >= 1")
        if self.clock not in ("process", "off"):
            raise ValueError("clock must be 'process' or 'off'")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    ais: AisConfig = field(default_factory=AisConfig)
    data: DataSpec = field(default_factory=DataSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    version: int = SCHEMA_VERSION


_NESTED = {
    (ExperimentConfig, "model"): ModelSpec,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "ais"): AisConfig,
    (ExperimentConfig, "data"): DataSpec,
    (ExperimentConfig, "output"): OutputSpec,
    (TrainConfig, "inference"): InferenceConfig,
    (TrainConfig, "solver"): SolverConfig,
}

_FLOATS = {"learning_rate", "damping", "tolerance", "weight_scale", "threshold", "p"}
_TUPLES = {"layer_sizes", "shape", "betas"}


def _coerce(name: str, value: Any) -> Any:
    if value is None:
        return None
    if name in _FLOATS:
        return float(value)
    if name in _TUPLES:
        return tuple(float(v) if name == "betas" else int(v) for v in value)
    return value


def _build(cls, mapping: Any, where: str):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in mapping.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else _coerce(key, value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(mapping: dict) -> ExperimentConfig:
    mapping = dict(mapping or {})
    version = mapping.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    return _build(ExperimentConfig, mapping, "config")


def parse(text: str) -> ExperimentConfig:
    return from_dict(yaml.safe_load(text))


def load(path) -> ExperimentConfig:
    return parse(Path(path).read_text())


def to_dict(config) -> dict:
    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj
    return convert(config)


def dump(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)


def override(config: ExperimentConfig, **changes) -> ExperimentConfig:
    """Apply dotted-path overrides, e.g. ``override(cfg, **{"train.seed": 3})``."""
    data = to_dict(config)
    for path, value in changes.items():
        node = data
        *parents, leaf = path.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config key {path!r}")
        node[leaf] = value
    return from_dict(data)
