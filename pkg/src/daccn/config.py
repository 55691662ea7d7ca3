"""Run configuration: schema, defaults, YAML loading and dotted overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable

import re

import yaml

from .errors import ConfigurationError
from .losses import LossConfig
from .model import ModelConfig
from .synthdata import SceneSpec


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats such as ``1e-3``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)$|^[-+]?\d+\.\d*$|^[-+]?\.\d+$"""),
    list("-+0123456789."),
)


def _parse(text: str):
    return yaml.load(text, Loader=_Loader)


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.kind!r}")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ConfigurationError("invalid optimizer hyper-parameters")


@dataclass
class DataConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    count: int = 96  # scenes generated; even indices train, odd validate
    seed: int = 0

    def __post_init__(self):
        if self.count < 2:
            raise ConfigurationError("data.count must be >= 2 (train + val split)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    iterations: int = 500
    batch_size: int = 2
    pose_mode: str = "ground_truth"  # or "pose_head"
    median_scaling: bool = True
    sq_rel_convention: str = "standard"
    output_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigurationError("iterations must be >= 0 and batch_size >= 1")
        if self.pose_mode not in ("ground_truth", "pose_head"):
            raise ConfigurationError(f"unknown pose_mode {self.pose_mode!r}")
        if self.pose_mode == "pose_head" and not self.model.pose_head:
            raise ConfigurationError("pose_mode 'pose_head' needs model.pose_head: true")
        if self.loss.num_scales != self.model.num_scales:
            raise ConfigurationError("loss.num_scales must equal model.num_scales")
        if (self.data.scene.image_h, self.data.scene.image_w) != (self.model.input_h,
                                                                 self.model.input_w):
            raise ConfigurationError("scene image size must equal model input size")


_NESTED = {
    RunConfig: {"model": ModelConfig, "loss": LossConfig, "optimizer": OptimizerConfig,
                "data": DataConfig},
    DataConfig: {"scene": SceneSpec},
}


def _build(cls, raw: Dict[str, Any], path: str = ""):
    where = path.rstrip(".") or "config"
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where} must be a mapping")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigurationError(f"unknown key(s) {sorted(unknown)} in {where}")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get(cls, {}).get(key)
        if sub:
            kwargs[key] = _build(sub, value, f"{path}{key}.")
        else:
            _check_type(f"{path}{key}", value, getattr(defaults, key))
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def _check_type(key: str, value, ref) -> None:
    if isinstance(ref, bool):
        ok = isinstance(value, bool)
    elif isinstance(ref, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(ref, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(ref, str):
        ok = isinstance(value, str)
    elif isinstance(ref, tuple):
        ok = isinstance(value, (list, tuple)) and len(value) == len(ref) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigurationError(f"{key}: expected {type(ref).__name__}, got {value!r}")


def from_dict(raw: Dict[str, Any]) -> RunConfig:
    return _build(RunConfig, raw or {})


def to_dict(cfg) -> Dict[str, Any]:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (tuple, list)):
            return [clean(x) for x in v]
        return v

    return clean(dataclasses.asdict(cfg))


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars."""
    raw = dict(raw or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = _parse(text)
    return raw


def load(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = _parse(fh.read()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return from_dict(apply_overrides(raw, overrides))


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
