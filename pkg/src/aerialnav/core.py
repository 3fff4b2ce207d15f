"""Shared domain types, geometry helpers and run configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
INFINITE = math.inf


class ConfigError(ValueError):
    """Invalid configuration value or configuration file."""


class BoundsError(ValueError):
    """An action component exceeds its actuation limit."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    w = math.fmod(a + math.pi, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    w -= math.pi
    # fmod/add rounding can land exactly on +pi
    if w >= math.pi:
        w -= TWO_PI
    return w


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    theta: float = 0.0
    phi: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"pose coordinate {name} is not finite: {v}")
            object.__setattr__(self, name, v)
        for name in ("theta", "phi", "psi"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"pose angle {name} is not finite: {v}")
            object.__setattr__(self, name, wrap_angle(v))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.theta, self.phi, self.psi]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> Pose:
        return cls(*values)

    @classmethod
    def at(cls, position: Sequence[float]) -> Pose:
        return cls(float(position[0]), float(position[1]), float(position[2]))


@dataclass(frozen=True)
class Action:
    """Additive pose delta."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dtheta: float = 0.0
    dphi: float = 0.0
    dpsi: float = 0.0

    def as_list(self) -> list[float]:
        return [self.dx, self.dy, self.dz, self.dtheta, self.dphi, self.dpsi]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> Action:
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class Waypoint:
    position: tuple[float, float, float]
    arrival_radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        if self.arrival_radius is not None and not self.arrival_radius > 0:
            raise ValueError("arrival_radius must be > 0")


def apply_action(p: Pose, a: Action, max_step_len: float = 5.0, max_turn: float = math.pi / 4) -> Pose:
    """Add an action to a pose, wrapping the angles.

    Raises BoundsError when any translational component exceeds
    ``max_step_len`` or any angular component exceeds ``max_turn``.
    """
    for name in ("dx", "dy", "dz"):
        v = getattr(a, name)
        if not abs(v) <= max_step_len:
            raise BoundsError(f"{name}={v} outside +-{max_step_len}")
    for name in ("dtheta", "dphi", "dpsi"):
        v = getattr(a, name)
        if not abs(v) <= max_turn:
            raise BoundsError(f"{name}={v} outside +-{max_turn}")
    return Pose(
        p.x + a.dx,
        p.y + a.dy,
        p.z + a.dz,
        p.theta + a.dtheta,
        p.phi + a.dphi,
        p.psi + a.dpsi,
    )


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.sqrt(sum((float(u) - float(v)) ** 2 for u, v in zip(a, b, strict=True)))


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))

    @property
    def n(self) -> int:
        return max(len(self.waypoints) - 1, 0)

    def positions(self) -> np.ndarray:
        return np.array([w.position for w in self.waypoints]).reshape(-1, 3)

    def path_length(self) -> float:
        return path_length(self)


def path_length(t: Trajectory) -> float:
    total = 0.0
    for a, b in zip(t.waypoints[:-1], t.waypoints[1:]):
        total += euclidean_distance(a.position, b.position)
    return total


DESCRIPTION_DIM = 8
_DESCRIPTION_POSITION_SCALE = 500.0


def describe_goal(goal_position: Sequence[float], goal_token_seed: int) -> np.ndarray:
    """Deterministic stand-in for an instruction embedding."""
    tokens = np.random.default_rng(goal_token_seed).standard_normal(DESCRIPTION_DIM - 3) * 0.5
    pos = np.asarray(goal_position, dtype=float) / _DESCRIPTION_POSITION_SCALE
    return np.concatenate([pos, tokens])


@dataclass(frozen=True)
class GoalSpec:
    goal_position: tuple[float, float, float]
    goal_token_seed: int
    description_features: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "goal_position", tuple(float(v) for v in self.goal_position))
        expected = tuple(float(v) for v in describe_goal(self.goal_position, self.goal_token_seed))
        if self.description_features and tuple(self.description_features) != expected:
            raise ValueError("description_features do not match goal_position/goal_token_seed")
        object.__setattr__(self, "description_features", expected)


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 200
    success_radius: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if not self.success_radius > 0:
            raise ConfigError("success_radius must be > 0")


SHAPING_MODES = ("paper-literal", "potential")


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 0.99
    r_level: float = 5.0
    r_max: float = 1e6
    shaping_mode: str = "potential"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not self.r_level > 0:
            raise ConfigError("r_level must be > 0 or inf")
        if not (math.isfinite(self.r_max) and self.r_max > 0):
            raise ConfigError("r_max must be a finite positive number")
        if math.isfinite(self.r_level) and self.r_max < self.r_level:
            raise ConfigError("r_max must be >= r_level")
        if self.shaping_mode not in SHAPING_MODES:
            raise ConfigError(f"shaping_mode must be one of {SHAPING_MODES}")

    @property
    def cap(self) -> float:
        return self.r_level if math.isfinite(self.r_level) else self.r_max


@dataclass(frozen=True)
class OptimizerConfig:
    epsilon: float = 0.2
    beta: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 64

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not self.beta >= 0.0:
            raise ConfigError("beta must be >= 0")
        if not self.learning_rate > 0.0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class WorldConfig:
    max_step_len: float = 5.0
    max_turn: float = math.pi / 4
    drone_radius: float = 1.0
    grid_resolution: float = 5.0
    helper_threshold: float = 30.0
    obstacle_count: int = 4
    z_min: float = 10.0
    z_max: float = 120.0
    min_start_goal: float = 50.0
    max_start_goal: float = 400.0
    easy_hard_split: float = 250.0
    max_resample: int = 200
    clearance_range: float = 30.0

    def __post_init__(self):
        if not self.max_step_len > 0 or not self.max_turn > 0:
            raise ConfigError("action bounds must be > 0")
        if not self.drone_radius >= 0:
            raise ConfigError("drone_radius must be >= 0")
        if not self.grid_resolution > 0:
            raise ConfigError("grid_resolution must be > 0")
        if self.obstacle_count < 0:
            raise ConfigError("obstacle_count must be >= 0")
        if not self.z_min < self.z_max:
            raise ConfigError("z_min must be < z_max")
        if not 0 < self.min_start_goal <= self.easy_hard_split <= self.max_start_goal:
            raise ConfigError("need 0 < min_start_goal <= easy_hard_split <= max_start_goal")


@dataclass(frozen=True)
class EncoderConfig:
    encoder_seed: int = 42
    feature_dim: int = 64
    length_scale: float = 50.0
    position_scale: float = 500.0
    projection_gain: float = 1.0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if not (self.length_scale > 0 and self.position_scale > 0):
            raise ConfigError("length_scale and position_scale must be > 0")


ASSISTANCE_LEVELS = ("L1", "L2", "L3")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    episodes_per_iteration: int = 16
    inner_epochs: int = 4
    hidden_size: int = 64
    init_log_std: float = -0.5
    w_dense: float = 1.0
    w_verif: float = 1.0
    baseline: bool = False
    train_assistance: str = "L1"
    margin: float = 0.01
    expert_episodes: int = 200
    value_epochs: int = 30
    value_learning_rate: float = 1e-3
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.iterations < 0 or self.inner_epochs < 0:
            raise ConfigError("iterations and inner_epochs must be >= 0")
        if self.episodes_per_iteration < 1:
            raise ConfigError("episodes_per_iteration must be >= 1")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1")
        if self.train_assistance not in ASSISTANCE_LEVELS:
            raise ConfigError(f"train_assistance must be one of {ASSISTANCE_LEVELS}")
        if not self.margin >= 0:
            raise ConfigError("margin must be >= 0")
        if self.expert_episodes < 1:
            raise ConfigError("expert_episodes must be >= 1")
        if not self.value_learning_rate > 0:
            raise ConfigError("value_learning_rate must be > 0")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for section in SECTIONS:
            out.update(dataclasses.asdict(getattr(self, section)))
        return out

    def replace(self, **kv: Any) -> RunConfig:
        """Return a copy with flat keys overridden."""
        return config_from_mapping({**self.flat(), **kv})

    def config_hash(self) -> str:
        return config_hash(self.flat())


SECTIONS = ("episode", "reward", "optimizer", "world", "encoder", "train")
_SECTION_TYPES = {
    "episode": EpisodeConfig,
    "reward": RewardConfig,
    "optimizer": OptimizerConfig,
    "world": WorldConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
}


def _key_owners() -> dict[str, tuple[str, type]]:
    owners: dict[str, tuple[str, type]] = {}
    for section, cls in _SECTION_TYPES.items():
        for f in dataclasses.fields(cls):
            assert f.name not in owners, f"duplicate config key {f.name}"
            owners[f.name] = (section, f.type)
    return owners


KEY_OWNERS = _key_owners()


def _coerce(key: str, typ: Any, value: Any) -> Any:
    typ = str(typ)
    try:
        if typ == "bool":
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if typ == "float":
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def config_from_mapping(values: dict[str, Any]) -> RunConfig:
    unknown = sorted(set(values) - set(KEY_OWNERS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    per_section: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    for key, value in values.items():
        section, typ = KEY_OWNERS[key]
        per_section[section][key] = _coerce(key, typ, value)
    return RunConfig(**{s: _SECTION_TYPES[s](**kv) for s, kv in per_section.items()})


def parse_config_text(text: str) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        values[key] = value
    return config_from_mapping(values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in cfg.flat().items())


def config_hash(flat: dict[str, Any]) -> str:
    blob = json.dumps({k: _fmt(v) for k, v in sorted(flat.items())}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
