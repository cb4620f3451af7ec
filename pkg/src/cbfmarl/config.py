"""YAML run configuration: nested sections mirroring the component configs,
strict unknown-key rejection, round-trip serialization and env construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import yaml

from .cbf import CbfConfig
from .dynamics import VehicleParams
from .env import IntersectionEnv, SimConfig
from .evaluation import EvalConfig
from .geometry import IntersectionMap, MapConfig, build_intersection
from .marl import PpoConfig
from .rewards import RewardConfig


class ConfigError(ValueError):
    """Bad configuration file: unknown key, wrong type or invalid value."""


@dataclass(frozen=True)
class CbfSettings:
    """Constraint parameters exposed to the config file (the constraint time
    step always equals the simulation dt)."""

    gamma: float = 1.0
    remainder: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    """Top-level configuration: one section per component."""

    map: MapConfig = field(default_factory=MapConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    sim: SimConfig = field(default_factory=SimConfig)
    cbf: CbfSettings = field(default_factory=CbfSettings)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value, target_type):
    """Coerce a YAML scalar/list to the dataclass field type."""
    if target_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected bool, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected int, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected string, got {value!r}")
        return value
    if target_type is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected list, got {value!r}")
        return tuple(value)
    return value


def _build_section(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key '{prefix}.{key}'")
        default = getattr(cls, key, known[key].default)
        target = type(default) if default is not None else None
        if target is None:
            # fall back on annotated primitive name
            target = {"int": int, "float": float, "str": str,
                      "bool": bool, "tuple": tuple}.get(str(known[key].type))
        kwargs[key] = _coerce(f"{prefix}.{key}", value, target)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a mapping")
    sections = {}
    classes = {"map": MapConfig, "vehicle": VehicleParams, "sim": SimConfig,
               "cbf": CbfSettings, "reward": RewardConfig, "ppo": PpoConfig,
               "eval": EvalConfig}
    for key, value in data.items():
        if key not in classes:
            raise ConfigError(f"unknown section '{key}'")
        sections[key] = _build_section(classes[key], value, key)
    return RunConfig(**sections)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for sec in fields(RunConfig):
        section = getattr(cfg, sec.name)
        out[sec.name] = {f.name: _plain(getattr(section, f.name))
                         for f in fields(section)}
    return out


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid yaml: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=True)


def default_config() -> RunConfig:
    return RunConfig()


def cbf_config_of(cfg: RunConfig) -> CbfConfig:
    return CbfConfig(gamma=cfg.cbf.gamma, remainder=cfg.cbf.remainder,
                     dt=cfg.sim.dt)


def build_map(cfg: RunConfig) -> IntersectionMap:
    try:
        return build_intersection(cfg.map)
    except ValueError as exc:
        raise ConfigError(f"map: {exc}") from exc


def build_env(cfg: RunConfig, method: str | None = None,
              overrides: dict | None = None,
              imap: IntersectionMap | None = None) -> IntersectionEnv:
    """Construct the intersection environment; method/overrides adjust the
    reward section (used by sweeps and the --method flag)."""
    reward = cfg.reward
    changes = dict(overrides or {})
    if method is not None:
        changes["method"] = method
    if changes:
        try:
            reward = dataclasses.replace(reward, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"reward: {exc}") from exc
    if imap is None:
        imap = build_map(cfg)
    try:
        return IntersectionEnv(imap, cfg.vehicle, cfg.sim, reward,
                               cbf_config_of(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class EnvFactory:
    """Picklable factory handed to sweep workers."""

    cfg: RunConfig

    def __call__(self, method: str, overrides: dict) -> IntersectionEnv:
        return build_env(self.cfg, method, overrides)
