"""Run configuration: defaults, TOML loading and flag overrides."""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import crf, evaluation
from .pipeline import ColorizeConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    target_size: int = 100
    levels: int = 8
    delta1: float = crf.DELTA1
    delta2: float = crf.DELTA2
    gamma: float = 1.0
    eta: float = 2.0
    tau: float = 0.05
    theta: float = evaluation.THETA
    jnd: float = evaluation.JND
    seed: int = 0
    threads: int = 1
    preference: float | None = None
    solver: str = "direct"
    dump_seeds: bool = False
    dump_superpixels: bool = False

    def __post_init__(self):
        for name in ("delta1", "delta2", "gamma", "eta", "tau", "theta", "jnd"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be a finite number >= 0, got {v!r}")
        if self.tau == 0:
            raise ConfigError("tau must be positive")
        for name in ("target_size", "levels", "threads"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.levels < 2:
            raise ConfigError("levels must be at least 2")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.solver not in ("direct", "cg"):
            raise ConfigError(f"solver must be 'direct' or 'cg', got {self.solver!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            target_size=self.target_size,
            levels=self.levels,
            tau=self.tau,
            seed=self.seed,
            preference=self.preference,
            threads=self.threads,
        )

    def colorize_config(self) -> ColorizeConfig:
        return ColorizeConfig(
            target_size=self.target_size,
            delta1=self.delta1,
            delta2=self.delta2,
            gamma=self.gamma,
            eta=self.eta,
            solver=self.solver,
        )


_FIELDS = {f.name for f in dataclasses.fields(Config)}


def from_mapping(d: dict, base: Config = Config()) -> Config:
    unknown = sorted(set(d) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return dataclasses.replace(base, **d)


def load(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the TOML file (top-level keys or a [refcolor] table), then non-None overrides."""
    cfg = Config()
    if path is not None:
        try:
            d = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = from_mapping(d.get("refcolor", d), cfg)
    if overrides:
        cfg = from_mapping({k: v for k, v in overrides.items() if v is not None}, cfg)
    return cfg
