"""Run configuration: one JSON-serialisable object per harness run.

A run is reproducible from (RunConfig, seed) alone; the CLI records the
resolved config next to every output batch.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .ddpg import AgentConfig
from .env import RewardConfig
from .grid import bundled_feeder_path
from .surrogate import SurrogateConfig


@dataclass
class ProfileConfig:
    kind: str = "synthetic"          # synthetic | csv
    csv_path: str | None = None
    n_days: int = 365
    base_load_mw: tuple[float, float] = (0.012, 0.04)
    power_factor: float = 0.95


@dataclass
class DataConfig:
    n_samples: int = 12000
    train_frac: float = 10000.0 / 12000.0


@dataclass
class EvalConfig:
    test_days: int = 30
    snapshot_hour: int = 13


@dataclass
class FastFluctConfig:
    seconds: int = 60
    p_high_mw: float = 0.6
    p_low_mw: float = 0.3
    hour: int = 13


@dataclass
class RunConfig:
    feeder: str = field(default_factory=bundled_feeder_path)
    seed: int = 0
    profiles: ProfileConfig = field(default_factory=ProfileConfig)
    data: DataConfig = field(default_factory=DataConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    fast_fluct: FastFluctConfig = field(default_factory=FastFluctConfig)


_SECTIONS = {
    "profiles": ProfileConfig,
    "data": DataConfig,
    "surrogate": SurrogateConfig,
    "agent": AgentConfig,
    "reward": RewardConfig,
    "eval": EvalConfig,
    "fast_fluct": FastFluctConfig,
}


class ConfigError(ValueError):
    pass


def _build(cls, raw, where):
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError("unknown key %r in %s" % (key, where))
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad %s section: %s" % (where, exc))


def from_dict(raw):
    cfg = RunConfig()
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError("section %r must be an object" % key)
            setattr(cfg, key, _build(_SECTIONS[key], value, key))
        elif key == "feeder":
            cfg.feeder = str(value)
        elif key == "seed":
            cfg.seed = int(value)
        else:
            raise ConfigError("unknown top-level key %r" % key)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    except json.JSONDecodeError as exc:
        raise ConfigError("config %s is not valid JSON: %s" % (path, exc))
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    return from_dict(raw)


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=1, default=list)
        fh.write("\n")
