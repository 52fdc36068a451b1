"""Run configuration: nested dataclasses with strict JSON round-tripping."""
from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass
from pathlib import Path

from .localizer import LocalizeConfig, NoiseModel
from .optimizer import OptConfig
from .scan import ScanConfig
from .search import KeyPoseConfig, SearchConfig, SigmoidParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AblationConfig:
    seeds: int = 20
    start_jitter_m: float = 0.1
    bootstrap_resamples: int = 2000
    confidence: float = 0.95


@dataclass(frozen=True)
class PlanConfig:
    map: str = "corridor_detour"  # benchmark name or path to a PNG with JSON sidecar
    mem: str | None = None  # optional prebuilt MEM image
    start: tuple | None = None  # (x, y, yaw); None uses the scenario default
    goal: tuple | None = None
    seed: int = 0
    scan: ScanConfig = ScanConfig()
    search: SearchConfig = SearchConfig()
    keyposes: KeyPoseConfig = KeyPoseConfig()
    opt: OptConfig = OptConfig()
    localize: LocalizeConfig = LocalizeConfig()
    noise: NoiseModel = NoiseModel()
    ablation: AblationConfig = AblationConfig()


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _build(cls, data, path="config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(data: dict) -> PlanConfig:
    cfg = _build(PlanConfig, data)
    for key in ("start", "goal"):
        v = getattr(cfg, key)
        if v is not None and (len(v) != 3 or not all(isinstance(a, (int, float)) and math.isfinite(a) for a in v)):
            raise ConfigError(f"config.{key}: expected three finite numbers")
    return cfg


def load_config(path) -> PlanConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(data)


def dump_config(cfg: PlanConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2)


__all__ = ["AblationConfig", "ConfigError", "PlanConfig", "SigmoidParams", "dump_config", "from_dict",
           "load_config", "to_dict"]
