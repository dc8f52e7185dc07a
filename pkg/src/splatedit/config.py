"""Pipeline configuration: TOML file, env overrides, CLI flag mirroring.

Precedence: defaults < TOML < SPLATEDIT_<SECTION>_<KEY> env vars < CLI flags.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

from .distill import DistillConfig
from .inpaint import InpaintConfig

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

ENV_PREFIX = "SPLATEDIT"


@dataclass
class AssociateConfig:
    sigma: float = 0.2
    min_mask_pixels: int = 16
    keep_ratio: float = -1.0  # <= 0 disables the nearest-fraction override

    @property
    def keep_ratio_or_none(self):
        return self.keep_ratio if self.keep_ratio > 0 else None


@dataclass
class TrajectoryConfig:
    views: int = 30
    hull: bool = False


@dataclass
class RenderConfig:
    background: tuple = (0.0, 0.0, 0.0)
    workers: int = 0  # 0 = library default


@dataclass
class Config:
    associate: AssociateConfig = field(default_factory=AssociateConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    render: RenderConfig = field(default_factory=RenderConfig)


def _coerce(value, target_type):
    if target_type is bool:
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if target_type is tuple:
        if isinstance(value, str):
            return tuple(float(x) for x in value.split(","))
        return tuple(value)
    return target_type(value)


def _apply(section, data: dict):
    for f in fields(section):
        if f.name in data:
            target = type(getattr(section, f.name))
            setattr(section, f.name, _coerce(data[f.name], target))


def load_config(path=None, environ=None) -> Config:
    cfg = Config()
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        for name in ("associate", "distill", "inpaint", "trajectory", "render"):
            if name in doc:
                _apply(getattr(cfg, name), doc[name])
    environ = os.environ if environ is None else environ
    for name in ("associate", "distill", "inpaint", "trajectory", "render"):
        section = getattr(cfg, name)
        for f in fields(section):
            key = f"{ENV_PREFIX}_{name.upper()}_{f.name.upper()}"
            if key in environ:
                target = type(getattr(section, f.name))
                setattr(section, f.name, _coerce(environ[key], target))
    return cfg
