"""Experiment configuration: defaults, then a YAML file, then ``key=value`` overrides.

Every section is a dataclass; unknown keys raise :class:`ConfigError` carrying
the dotted key path. Unset seeds are derived from ``run.seed``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import yaml

from .maxnorm import MaxNormConfig
from .mixing import MixingConfig
from .rebalance import RebalanceConfig


class ConfigError(ValueError):
    def __init__(self, key_path, message):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path


@dataclass
class RunConfig:
    name: str = "glmc"
    out_dir: str = "runs"
    seed: int = 0


@dataclass
class SyntheticConfig:
    num_classes: int = 10
    per_class: int = 5000
    test_per_class: int = 1000
    image_size: int = 32
    channels: int = 3
    noise: float = 0.35
    seed: int = 0


@dataclass
class DataConfig:
    # cifar10 | cifar100 | npz | synthetic
    source: str = "synthetic"
    # dataset root for cifar (falls back to $GLMC_DATA_ROOT) or the .npz path
    root: Optional[str] = None
    imbalance_factor: float = 100.0
    max_count: Optional[int] = None
    # subsampling seed; independent of run.seed so every run sees the same subset
    seed: int = 0
    # directory written by ``build-data``; overrides the subset construction above
    manifest: Optional[str] = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.source not in ("cifar10", "cifar100", "npz", "synthetic"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.imbalance_factor < 1:
            raise ValueError("imbalance_factor must be >= 1")


@dataclass
class SamplerSection:
    resample_k: float = 0.2
    seed: Optional[int] = None

    def __post_init__(self):
        if self.resample_k < 0:
            raise ValueError("resample_k must be >= 0")


@dataclass
class ModelConfig:
    encoder: str = "resnet32"
    proj_dim: Optional[int] = None
    # longtail -> rebalanced head at inference, balanced -> conventional head
    head_mode: str = "longtail"

    def __post_init__(self):
        if self.head_mode not in ("longtail", "balanced"):
            raise ValueError("head_mode must be 'longtail' or 'balanced'")


@dataclass
class TrainConfig:
    method: str = "glmc"
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.01
    weight_decay: float = 5e-3
    momentum: float = 0.9
    seed: Optional[int] = None
    steps_per_epoch: Optional[int] = None
    eval_every: int = 1
    augment: bool = True
    device: str = "cpu"
    # float32 | float64; float64 is for exact-equivalence checks
    dtype: str = "float32"
    prefetch: int = 2

    def __post_init__(self):
        if self.method not in ("glmc", "ce"):
            raise ValueError("method must be 'glmc' or 'ce'")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (mixing needs pairs)")


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    mix: MixingConfig = field(default_factory=MixingConfig)
    rebalance: RebalanceConfig = field(default_factory=RebalanceConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: MaxNormConfig = field(default_factory=MaxNormConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved(self) -> "ExperimentConfig":
        """Copy with every derived value (seeds) filled in."""
        d = self.to_dict()
        base = d["run"]["seed"]
        for i, section in enumerate(("sampler", "mix", "train")):
            if d[section]["seed"] is None:
                d[section]["seed"] = base * 1000 + i + 1
        return from_dict(d)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(key_path, "unknown key")
        default = known[key].default_factory() if known[key].default_factory is not \
            dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, key_path)
        else:
            kwargs[key] = _coerce(value, known[key].default, key_path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(path or "<root>", str(e)) from None


def _coerce(value, default, key_path):
    if value is None or default is None or default is dataclasses.MISSING:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key_path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        raise ConfigError(key_path, f"expected a number, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
        if not value.is_integer():
            raise ConfigError(key_path, f"expected an integer, got {value!r}")
        return int(value)
    return value


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(item: str) -> dict:
    """``"train.epochs=30"`` -> ``{"train": {"epochs": 30}}``."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key.path=value")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw) if raw.strip() else None
    out: dict = {}
    cur = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def load_config(path: Optional[str] = None, overrides=()) -> ExperimentConfig:
    data: dict = {}
    if path:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("<root>", "config file must hold a mapping")
        data = loaded
    for item in overrides:
        data = _merge(data, parse_override(item))
    return from_dict(data)


def dump_config(config: ExperimentConfig, path: str):
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
