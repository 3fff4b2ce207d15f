"""Value-difference trajectory reward, capped similarity reward and value-model fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .neural import OptState, ValueParams, mlp_backward, mlp_forward, opt_step, value_forward


class SequenceTooShortError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


def per_step_shaped_reward(v_t: float, v_next: float, gamma: float, mode: str = "potential", t: int = 1) -> float:
    """Reward for one transition.

    ``paper-literal``: gamma**t * (v_t - v_next), with 1-based step index ``t``.
    ``potential``: gamma * v_next - v_t.
    """
    if mode == "paper-literal":
        return gamma**t * (v_t - v_next)
    if mode == "potential":
        return gamma * v_next - v_t
    raise ValueError(f"unknown shaping mode {mode!r}")


def step_weight(t: int, gamma: float, mode: str) -> float:
    """Weight of step ``t`` (1-based) when summing per-step rewards into the trajectory total."""
    return 1.0 if mode == "paper-literal" else gamma ** (t - 1)


def dense_trajectory_reward(vs: Sequence[float], gamma: float, mode: str = "potential") -> float:
    """Total over ``n = len(vs) - 1`` transitions.

    paper-literal: sum_t gamma**t (v_t - v_{t+1});
    potential:     sum_t gamma**(t-1) (gamma v_{t+1} - v_t).
    """
    if len(vs) < 2:
        raise SequenceTooShortError("value sequence needs at least two entries")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    total = 0.0
    for t in range(1, len(vs)):
        r = per_step_shaped_reward(float(vs[t - 1]), float(vs[t]), gamma, mode, t)
        total += step_weight(t, gamma, mode) * r
    return total


def verifiable_reward(sim: float, r_level: float, r_max: float = 1e6) -> float:
    """min(1 / (1 - sim), cap) where cap is r_level, or r_max when r_level is infinite."""
    if not -1.0 <= sim <= 1.0:
        raise ValueError(f"similarity {sim} outside [-1, 1]")
    cap = r_level if math.isfinite(r_level) else r_max
    if sim >= 1.0:
        return cap
    return min(1.0 / (1.0 - sim), cap)


def value_ranking_loss(vs: Sequence[float], margin: float) -> float:
    """Mean hinge max(0, margin + v_t - v_{t+1}) over adjacent pairs."""
    vs = np.asarray(vs, dtype=float)
    if vs.size < 2:
        raise SequenceTooShortError("value sequence needs at least two entries")
    return float(np.maximum(0.0, margin + vs[:-1] - vs[1:]).mean())


def _ranking_loss_and_grad(values: np.ndarray, seq_ids: np.ndarray, margin: float) -> tuple[float, np.ndarray]:
    # pairs are adjacent entries sharing a sequence id
    same = seq_ids[:-1] == seq_ids[1:]
    hinge = margin + values[:-1] - values[1:]
    n_pairs = int(same.sum())
    active = same & (hinge > 0)
    loss = float(np.where(active, hinge, 0.0).sum() / n_pairs)
    grad = np.zeros_like(values)
    w = active / n_pairs
    grad[:-1] += w
    grad[1:] -= w
    return loss, grad


def ranking_loss_grad(v: ValueParams, sequences: Sequence[np.ndarray], margin: float) -> tuple[float, dict[str, np.ndarray]]:
    """Mean ranking loss over all adjacent pairs of ``sequences`` and its parameter gradient."""
    obs = np.concatenate(sequences)
    ids = np.concatenate([np.full(len(s), i) for i, s in enumerate(sequences)])
    out, acts = mlp_forward(v.net, obs)
    loss, dvals = _ranking_loss_and_grad(out[:, 0], ids, margin)
    return loss, mlp_backward(v.net, acts, dvals[:, None])


def monotone_pair_fraction(v: ValueParams, sequences: Sequence[np.ndarray]) -> float:
    """Fraction of adjacent pairs with v_t < v_{t+1}."""
    good = total = 0
    for s in sequences:
        vals = np.atleast_1d(value_forward(v, s))
        good += int((vals[1:] > vals[:-1]).sum())
        total += len(vals) - 1
    return good / total if total else float("nan")


@dataclass
class ValueFitReport:
    epoch_losses: list[float] = field(default_factory=list)
    train_monotone: float = float("nan")
    heldout_monotone: float = float("nan")


def fit_value_model(
    v: ValueParams,
    sequences: Sequence[np.ndarray],
    margin: float,
    epochs: int,
    learning_rate: float,
    *,
    heldout: Sequence[np.ndarray] = (),
    batch_sequences: int = 8,
    rng: np.random.Generator | None = None,
) -> tuple[ValueParams, ValueFitReport]:
    """Minimize the mean ranking loss over expert observation sequences.

    Each sequence is an (n+1, d) array of observation features along one
    expert trajectory. ``epoch_losses[0]`` is the loss before training and
    ``epoch_losses[k]`` the full-dataset loss after epoch ``k``.
    """
    seqs = [np.asarray(s, dtype=float) for s in sequences if len(s) >= 2]
    if not seqs:
        raise EmptyDatasetError("need at least one expert sequence with two or more states")
    rng = rng if rng is not None else np.random.default_rng(0)
    report = ValueFitReport()
    report.epoch_losses.append(ranking_loss_grad(v, seqs, margin)[0])
    state = OptState.zeros_like(v.arrays())
    for _ in range(epochs):
        order = rng.permutation(len(seqs))
        for start in range(0, len(seqs), batch_sequences):
            batch = [seqs[i] for i in order[start : start + batch_sequences]]
            _, grads = ranking_loss_grad(v, batch, margin)
            v, state = opt_step(v, grads, state, learning_rate)
        report.epoch_losses.append(ranking_loss_grad(v, seqs, margin)[0])
    report.train_monotone = monotone_pair_fraction(v, seqs)
    if heldout:
        report.heldout_monotone = monotone_pair_fraction(v, [np.asarray(s) for s in heldout if len(s) >= 2])
    return v, report
