"""Run configuration: defaults, YAML loading/dumping and a stable hash.

Config files are YAML mappings.  Every key is optional and overrides the
default of the same name; unknown keys are rejected.  Schema::

    seed: 0                 # master seed
    alpha: 0.5              # weight of the LQR force in the applied control
    T: 20.0                 # episode length (s)
    dt: 0.02                # control / integration step (s)
    episodes: 100
    history: 4              # l, samples per signal in the agent state
    reward_weights: [1.0, 0.01, 0.001]
    u_max: 10.0             # force per unit actor output
    u_clamp: null           # optional symmetric clamp on the applied force
    x0: 0.0
    v0: 0.0
    eval_seeds: 10
    save_trajectories: true
    assumed: {m: 1.6, c: -0.5, k: 181.0, k3: 0.0}
    true: {m: 1.0, c: 0.4, k: 100.0, k3: 1.0}
    excitation: {omega_g: 15.56, zeta_g: 0.64, intensity: 0.00992...}
    lqr: {q: [[1, 0], [0, 1]], r: 0.001}
    lac: {lr_actor: 1.0e-4, lr_critic: 3.0e-4, gamma: 0.998, tau: 0.005, ...}
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dynamics import ASSUMED_PLANT, TRUE_PLANT, PlantParams
from .excitation import DEFAULT_INTENSITY, DEFAULT_OMEGA_G, DEFAULT_ZETA_G, sample_count
from .lac import LacConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExcitationConfig:
    omega_g: float = DEFAULT_OMEGA_G
    zeta_g: float = DEFAULT_ZETA_G
    intensity: float = DEFAULT_INTENSITY


@dataclass(frozen=True)
class LqrConfig:
    q: tuple[tuple[float, ...], ...] = ((1.0, 0.0), (0.0, 1.0))
    r: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    alpha: float = 0.5
    T: float = 20.0
    dt: float = 0.02
    episodes: int = 100
    history: int = 4
    reward_weights: tuple[float, float, float] = (1.0, 1e-2, 1e-3)
    u_max: float = 10.0
    u_clamp: float | None = None
    x0: float = 0.0
    v0: float = 0.0
    eval_seeds: int = 10
    save_trajectories: bool = True
    assumed: PlantParams = ASSUMED_PLANT
    true: PlantParams = TRUE_PLANT
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    lqr: LqrConfig = field(default_factory=LqrConfig)
    lac: LacConfig = field(default_factory=LacConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.history < 1:
            raise ConfigError("history length must be >= 1")
        if not (self.T > 0 and self.dt > 0):
            raise ConfigError("T and dt must be > 0")
        if self.episodes < 0 or self.eval_seeds < 0:
            raise ConfigError("episodes and eval_seeds must be >= 0")
        if any(w < 0 for w in self.reward_weights) or len(self.reward_weights) != 3:
            raise ConfigError("reward_weights must be three nonnegative numbers")
        if self.u_max < 0:
            raise ConfigError("u_max must be >= 0")
        if self.u_clamp is not None and self.u_clamp <= 0:
            raise ConfigError("u_clamp must be positive when set")

    @property
    def n_steps(self) -> int:
        return sample_count(self.T, self.dt)

    @property
    def state_dim(self) -> int:
        return 4 * self.history

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def replace_lac(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, lac=dataclasses.replace(self.lac, **changes))


_SECTIONS = {"assumed": PlantParams, "true": PlantParams, "excitation": ExcitationConfig,
             "lqr": LqrConfig, "lac": LacConfig}


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    return _plain(cfg)


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _coerce(value, default):
    """Match the type of a float default (YAML 1.1 reads ``1e9`` as a string)."""
    numeric = isinstance(default, float) or (default is None and isinstance(value, str))
    if numeric and isinstance(value, (str, int)) and not isinstance(value, bool):
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"expected a number, got {value!r}") from exc
    return _tupled(value)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    base = cls() if cls is not PlantParams else None
    defaults = {f.name: 0.0 if base is None else getattr(base, f.name)
                for f in dataclasses.fields(cls)}
    kwargs = {k: _coerce(v, defaults[k]) for k, v in data.items()}
    try:
        if base is None:
            return cls(**kwargs)
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict | None, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    data = dict(data or {})
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            merged = {**_plain(getattr(base, key)), **(value or {})}
            kwargs[key] = _build(_SECTIONS[key], merged, key)
        else:
            kwargs[key] = _coerce(value, getattr(base, key))
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
        data = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data, base)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=None)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
