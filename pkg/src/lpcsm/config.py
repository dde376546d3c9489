"""Run configuration files: YAML with fixed sections, unknown keys rejected."""

from __future__ import annotations

from dataclasses import dataclass, fields

import yaml

from .numerics import NumericsError
from .model import ModelConfig
from .objective import LossWeights, SgdConfig
from .data import SyntheticTask


class ConfigError(Exception):
    pass


@dataclass
class TrainSettings:
    steps: int = 100
    batch_size: int = 1
    seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig
    loss: LossWeights
    optimizer: SgdConfig
    task: SyntheticTask
    train: TrainSettings


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossWeights,
    "optimizer": SgdConfig,
    "task": SyntheticTask,
    "train": TrainSettings,
}


def _build(section: str, cls, data: dict):
    valid = {f.name for f in fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, NumericsError) as e:
        raise ConfigError(f"section [{section}]: {e}") from e


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    if "model" not in raw or "task" not in raw:
        raise ConfigError("config requires [model] and [task] sections")
    built = {}
    for name, cls in _SECTIONS.items():
        built[name] = _build(name, cls, raw.get(name, {}) or {})
    return RunConfig(**built)
