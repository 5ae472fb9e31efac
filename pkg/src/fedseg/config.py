"""Experiment configuration: nested dataclasses loaded from YAML.

Every section is optional; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .agent import AgentConfig, QNetworkSpec
from .data import PhantomSpec
from .fed.aggregate import RoundPolicy
from .refine import RefineLossConfig, RefineNetSpec, RefineTrainConfig
from .threshenv import RewardConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    distribution: tuple[int, ...] = (6, 6, 6)
    slices_per_subject: int = 20
    split_frac: float = 0.8
    phantom: PhantomSpec = PhantomSpec()


@dataclass(frozen=True)
class AgentSection:
    dqn: AgentConfig = AgentConfig()
    qnet: QNetworkSpec = QNetworkSpec()
    # cap for local-only training
    epochs: int = 20


@dataclass(frozen=True)
class RefineSection:
    net: RefineNetSpec = RefineNetSpec()
    loss: RefineLossConfig = RefineLossConfig()
    train: RefineTrainConfig = RefineTrainConfig()
    epochs: int = 20


@dataclass(frozen=True)
class FedSection:
    policy: RoundPolicy = RoundPolicy()
    endpoint: str = "127.0.0.1:7450"
    expected_sites: int = 3
    # rounds over which the DQN exploration rate decays
    explore_rounds: int = 1
    register_timeout: float = 120.0


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    train: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    env: RewardConfig = RewardConfig()
    agent: AgentSection = AgentSection()
    refine: RefineSection = RefineSection()
    fed: FedSection = FedSection()
    seeds: Seeds = Seeds()

    def phantom_spec(self) -> PhantomSpec:
        return dataclasses.replace(self.data.phantom, seed=self.seeds.data)


def _build(cls, raw: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return raw
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        default = getattr(defaults, name)
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub} must be a list")
            kwargs[name] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{sub} must be a boolean")
            kwargs[name] = value
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{sub} must be an integer")
            kwargs[name] = value
        elif isinstance(default, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{sub} must be a number")
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from exc


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, raw or {}, "")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
