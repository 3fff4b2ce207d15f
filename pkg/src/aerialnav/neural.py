"""Small tanh MLPs with hand-written backprop, diagonal Gaussian helpers and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, OptimizerConfig

ACTION_DIM = 6
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass(frozen=True)
class MlpParams:
    """Weights for ``x -> tanh(W0 x + b0) -> ... -> W_last h + b_last``.

    ``arrays`` maps ``W{i}``/``b{i}`` to layer ``i``; the last layer is linear.
    Treat instances as immutable snapshots.
    """

    sizes: tuple[int, ...]
    arrays: dict[str, np.ndarray] = field(repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        for i in range(self.n_layers):
            w, b = self.arrays[f"W{i}"], self.arrays[f"b{i}"]
            if w.shape != (self.sizes[i + 1], self.sizes[i]) or b.shape != (self.sizes[i + 1],):
                raise ConfigError(f"layer {i} shapes {w.shape}/{b.shape} do not match sizes {self.sizes}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_gain: float = 1.0) -> MlpParams:
        arrays = {}
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            arrays[f"W{i}"] = _orthogonal(rng, sizes[i + 1], sizes[i], out_gain if last else 1.0)
            arrays[f"b{i}"] = np.zeros(sizes[i + 1])
        return cls(tuple(sizes), arrays)

    @classmethod
    def zeros(cls, sizes) -> MlpParams:
        arrays = {}
        for i in range(len(sizes) - 1):
            arrays[f"W{i}"] = np.zeros((sizes[i + 1], sizes[i]))
            arrays[f"b{i}"] = np.zeros(sizes[i + 1])
        return cls(tuple(sizes), arrays)


def mlp_forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward a batch ``x`` of shape (N, in); returns output and activations cache."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.sizes[0]:
        raise ConfigError(f"input dimension {x.shape[-1]} != {p.sizes[0]}")
    acts = [x]
    h = x
    for i in range(p.n_layers):
        h = h @ p.arrays[f"W{i}"].T + p.arrays[f"b{i}"]
        if i < p.n_layers - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(p: MlpParams, acts: list[np.ndarray], dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given dL/doutput for the batch in ``acts``."""
    grads = {}
    g = dout
    for i in reversed(range(p.n_layers)):
        if i < p.n_layers - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[f"W{i}"] = g.T @ acts[i]
        grads[f"b{i}"] = g.sum(axis=0)
        if i > 0:
            g = g @ p.arrays[f"W{i}"]
    return grads


@dataclass(frozen=True)
class PolicyParams:
    """Gaussian policy: MLP for the action mean plus state-independent log std."""

    net: MlpParams
    log_std: np.ndarray = field(repr=False)

    @property
    def obs_dim(self) -> int:
        return self.net.sizes[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {**self.net.arrays, "log_std": self.log_std}

    @classmethod
    def from_arrays(cls, sizes, arrays: dict[str, np.ndarray]) -> PolicyParams:
        net = {k: v for k, v in arrays.items() if k != "log_std"}
        return cls(MlpParams(tuple(sizes), net), np.clip(arrays["log_std"], LOG_STD_MIN, LOG_STD_MAX))

    @classmethod
    def init(cls, obs_dim: int, hidden: int, rng: np.random.Generator, init_log_std: float = -0.5) -> PolicyParams:
        net = MlpParams.init((obs_dim, hidden, hidden, ACTION_DIM), rng, out_gain=0.01)
        return cls(net, np.full(ACTION_DIM, float(np.clip(init_log_std, LOG_STD_MIN, LOG_STD_MAX))))


@dataclass(frozen=True)
class ValueParams:
    net: MlpParams

    @property
    def obs_dim(self) -> int:
        return self.net.sizes[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(self.net.arrays)

    @classmethod
    def from_arrays(cls, sizes, arrays: dict[str, np.ndarray]) -> ValueParams:
        return cls(MlpParams(tuple(sizes), dict(arrays)))

    @classmethod
    def init(cls, obs_dim: int, hidden: int, rng: np.random.Generator) -> ValueParams:
        return cls(MlpParams.init((obs_dim, hidden, hidden, 1), rng, out_gain=1.0))


def policy_forward(p: PolicyParams, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std for a single observation or a batch of them."""
    obs = np.asarray(obs, dtype=float)
    mean, _ = mlp_forward(p.net, obs)
    std = np.exp(p.log_std)
    if obs.ndim == 2:
        std = np.broadcast_to(std, mean.shape)
    return mean, std


def value_forward(v: ValueParams, obs: np.ndarray) -> np.ndarray | float:
    obs = np.asarray(obs, dtype=float)
    out, _ = mlp_forward(v.net, obs)
    if obs.ndim == 1:
        return float(out[0])
    return out[:, 0]


def _check_std(*stds):
    for s in stds:
        if np.any(np.asarray(s) <= 0):
            raise ValueError("standard deviation must be positive")


def gaussian_log_prob(mean, std, action) -> np.ndarray | float:
    """Diagonal Gaussian log-density, summed over the last axis."""
    _check_std(std)
    mean, std, action = (np.asarray(a, dtype=float) for a in (mean, std, action))
    z = (action - mean) / std
    out = -0.5 * z**2 - np.log(std) - 0.5 * _LOG_2PI
    return out.sum(axis=-1)


def gaussian_kl(mean1, std1, mean2, std2) -> np.ndarray | float:
    """KL(N1 || N2) for diagonal Gaussians, summed over the last axis."""
    _check_std(std1, std2)
    mean1, std1, mean2, std2 = (np.asarray(a, dtype=float) for a in (mean1, std1, mean2, std2))
    out = np.log(std2 / std1) + (std1**2 + (mean1 - mean2) ** 2) / (2.0 * std2**2) - 0.5
    return out.sum(axis=-1)


# --------------------------------------------------------------------------
# Adam

@dataclass(frozen=True)
class OptState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: dict[str, np.ndarray]) -> OptState:
        return cls({k: np.zeros_like(a) for k, a in arrays.items()}, {k: np.zeros_like(a) for k, a in arrays.items()}, 0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_update(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptState,
    learning_rate: float,
) -> tuple[dict[str, np.ndarray], OptState]:
    if set(arrays) != set(grads) or set(arrays) != set(state.m):
        raise ConfigError("parameter, gradient and optimizer-state keys differ")
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_arrays, new_m, new_v = {}, {}, {}
    for k, a in arrays.items():
        g = grads[k]
        if g.shape != a.shape or state.m[k].shape != a.shape:
            raise ConfigError(f"shape mismatch for {k}: {a.shape} vs {g.shape}")
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        new_arrays[k] = a - learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_m[k], new_v[k] = m, v
    return new_arrays, OptState(new_m, new_v, t)


def opt_step(params, grads: dict[str, np.ndarray], state: OptState, cfg: OptimizerConfig | float):
    """One Adam step on PolicyParams or ValueParams; log_std is re-clamped.

    ``cfg`` is an OptimizerConfig or a bare learning rate.
    """
    lr = cfg.learning_rate if isinstance(cfg, OptimizerConfig) else float(cfg)
    arrays, new_state = adam_update(params.arrays(), grads, state, lr)
    if isinstance(params, PolicyParams):
        return PolicyParams.from_arrays(params.net.sizes, arrays), new_state
    if isinstance(params, ValueParams):
        return ValueParams.from_arrays(params.net.sizes, arrays), new_state
    raise TypeError(f"unsupported parameter type {type(params).__name__}")
