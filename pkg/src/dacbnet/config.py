"""Run configuration: one JSON document for model, training, data and output.

Unknown keys are rejected at every nesting level. ``--set a.b=value`` style
overrides are applied to the raw document before validation, and the fully
resolved document is written next to a run's outputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass

from .backbone import ModelConfig
from .data.augment import AugmentSpec
from .data.manifest import SplitSpec
from .data.ppm import atomic_write_bytes
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    manifest: str = ""
    split: SplitSpec = field(default_factory=SplitSpec)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    balance_target: int | None = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return MISSING


def _build(cls, raw, path: str):
    """Instantiate dataclass ``cls`` from a mapping, recursing into nested dataclasses."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = _default(known[name])
        sub = f"{path}.{name}" if path else name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def parse_value(text: str):
    """JSON literal if it parses, else the bare string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> dict:
    """Set a dotted key in place, e.g. ``train.loss.beta=-0.5``."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not an object")
    node[parts[-1]] = parse_value(value.strip())
    return raw


def read_raw(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def resolve(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_config(path, overrides=()) -> RunConfig:
    raw = read_raw(path)
    for o in overrides:
        apply_override(raw, o)
    return resolve(raw)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def write_resolved(cfg: RunConfig, directory, name: str = "resolved_config.json") -> str:
    path = os.path.join(directory, name)
    atomic_write_bytes(path, dumps(cfg).encode("utf-8"))
    return path
