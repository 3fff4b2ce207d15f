"""Frozen seeded feature encoder and cosine similarity.

States and waypoints are mapped through the same random projection so that a
pose sitting on a waypoint produces nearly the same features as the waypoint
itself. Channels that only exist for states (orientation, obstacle clearance,
hint) are zero on the waypoint side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DESCRIPTION_DIM, ConfigError, EncoderConfig, GoalSpec, Pose, Waypoint

# position(3) | goal offset(3) | sin/cos-1 of angles(6) | clearance(3) | hint offset(3) | description
RAW_DIM = 18 + DESCRIPTION_DIM


class SimilarityError(ValueError):
    """Cosine similarity requested for a zero vector."""


@dataclass(frozen=True)
class EncoderParams:
    seed: int
    d: int
    length_scale: float
    position_scale: float
    weight: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    @classmethod
    def from_config(cls, cfg: EncoderConfig) -> EncoderParams:
        rng = np.random.default_rng(cfg.encoder_seed)
        w = rng.standard_normal((cfg.feature_dim, RAW_DIM)) * (cfg.projection_gain / math.sqrt(RAW_DIM))
        b = rng.standard_normal(cfg.feature_dim) * 0.1
        w.setflags(write=False)
        b.setflags(write=False)
        return cls(cfg.encoder_seed, cfg.feature_dim, cfg.length_scale, cfg.position_scale, w, b)

    def fingerprint(self) -> tuple[bytes, bytes]:
        return self.weight.tobytes(), self.bias.tobytes()


def _project(enc: EncoderParams, raw: np.ndarray) -> np.ndarray:
    if raw.shape != (RAW_DIM,):
        raise ConfigError(f"raw input has shape {raw.shape}, expected ({RAW_DIM},)")
    if enc.weight.shape != (enc.d, RAW_DIM):
        raise ConfigError("encoder weight shape does not match its dimension")
    return np.tanh(enc.weight @ raw + enc.bias)


def state_raw(
    enc: EncoderParams,
    pose: Pose,
    goal: GoalSpec,
    hint: np.ndarray | None = None,
    clearance: np.ndarray | None = None,
) -> np.ndarray:
    pos = pose.position
    g = np.asarray(goal.goal_position)
    ang = np.array([pose.theta, pose.phi, pose.psi])
    raw = np.zeros(RAW_DIM)
    raw[0:3] = pos / enc.position_scale
    raw[3:6] = (g - pos) / enc.length_scale
    raw[6:9] = np.sin(ang)
    raw[9:12] = np.cos(ang) - 1.0
    if clearance is not None:
        raw[12:15] = clearance
    if hint is not None:
        raw[15:18] = (np.asarray(hint, dtype=float) - pos) / enc.length_scale
    raw[18:] = goal.description_features
    return raw


def goal_raw(enc: EncoderParams, w: Waypoint, goal: GoalSpec) -> np.ndarray:
    p = np.asarray(w.position)
    raw = np.zeros(RAW_DIM)
    raw[0:3] = p / enc.position_scale
    raw[3:6] = (np.asarray(goal.goal_position) - p) / enc.length_scale
    raw[18:] = goal.description_features
    return raw


def encode_state(
    enc: EncoderParams,
    pose: Pose,
    goal: GoalSpec,
    hint: np.ndarray | None = None,
    clearance: np.ndarray | None = None,
) -> np.ndarray:
    """Features of the current state; ``clearance`` is already normalized."""
    return _project(enc, state_raw(enc, pose, goal, hint, clearance))


def encode_goal(enc: EncoderParams, w: Waypoint, goal: GoalSpec) -> np.ndarray:
    return _project(enc, goal_raw(enc, w, goal))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ConfigError(f"feature dimensions differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise SimilarityError("cosine similarity of a zero vector is undefined")
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))
