"""Clipped-ratio policy fine-tuning with a KL anchor to the initial policy."""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import RunConfig
from .encoder import EncoderParams
from .neural import (
    OptState,
    PolicyParams,
    ValueParams,
    gaussian_kl,
    gaussian_log_prob,
    mlp_backward,
    mlp_forward,
    opt_step,
    policy_forward,
)
from .rewards import ValueFitReport, fit_value_model
from .simworld import Episode, GaussianController, OracleController, Scenario, expert_sequences, run_episode

log = logging.getLogger(__name__)

# seed-stream tags, combined with the master seed
_INIT, _PICK, _ROLLOUT, _SHUFFLE, _EXPERT, _VALUE_FIT = range(6)


def derive_seed(master_seed: int, *tags: int) -> int:
    # SeedSequence ignores trailing zeros, so the tag count goes in as well
    return int(np.random.default_rng([int(master_seed), len(tags), *tags]).integers(2**63 - 1))


def total_step_reward(dense: float, verifiable: float, w_dense: float = 1.0, w_verif: float = 1.0) -> float:
    return w_dense * dense + w_verif * verifiable


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class RolloutBatch:
    obs: np.ndarray
    samples: np.ndarray
    log_prob_old: np.ndarray
    rewards: np.ndarray
    dense: np.ndarray
    verifiable: np.ndarray
    step: np.ndarray
    episode: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    def subset(self, idx: np.ndarray) -> RolloutBatch:
        return RolloutBatch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], w_dense: float = 1.0, w_verif: float = 1.0) -> RolloutBatch:
        recs = [(i, r) for i, ep in enumerate(episodes) for r in ep.records]
        if not recs:
            raise EmptyBatchError("episodes contain no steps")
        dense = np.array([r.reward_dense for _, r in recs])
        verif = np.array([r.reward_verifiable for _, r in recs])
        return cls(
            obs=np.stack([r.observation for _, r in recs]),
            samples=np.stack([r.sample for _, r in recs]),
            log_prob_old=np.array([r.log_prob for _, r in recs]),
            rewards=total_step_reward(dense, verif, w_dense, w_verif),
            dense=dense,
            verifiable=verif,
            step=np.array([r.t for _, r in recs]),
            episode=np.array([i for i, _ in recs]),
        )


def ppo_kl_loss(
    batch: RolloutBatch,
    policy: PolicyParams,
    ref_policy: PolicyParams,
    epsilon: float,
    beta: float,
    *,
    old_policy: PolicyParams | None = None,
    baseline: bool = False,
    with_grad: bool = False,
):
    """Negated clipped surrogate minus KL penalty, averaged over the batch.

    ratio = exp(log pi(a|s) - log pi_old(a|s)); the reward multiplies the ratio
    directly. ``old_policy`` overrides the log-probs recorded at sampling time.
    Returns the loss, or ``(loss, grads, info)`` when ``with_grad``.
    """
    n = len(batch)
    if n == 0:
        raise EmptyBatchError("cannot evaluate the loss on an empty batch")
    mean, acts = mlp_forward(policy.net, batch.obs)
    log_std = policy.log_std
    std = np.exp(log_std)
    logp = gaussian_log_prob(mean, std, batch.samples)
    if old_policy is not None:
        m_old, s_old = policy_forward(old_policy, batch.obs)
        logp_old = gaussian_log_prob(m_old, s_old, batch.samples)
    else:
        logp_old = batch.log_prob_old
    rewards = batch.rewards - batch.rewards.mean() if baseline else batch.rewards
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon)
    surr = np.minimum(ratio * rewards, clipped * rewards)
    m_ref, s_ref = policy_forward(ref_policy, batch.obs)
    kl = gaussian_kl(mean, std, m_ref, s_ref)
    loss = float(-(surr - beta * kl).mean())
    if not with_grad:
        return loss

    # the min picks the clipped branch only when it is strictly smaller
    unclipped = ratio * rewards <= clipped * rewards
    dsurr_dlogp = np.where(unclipped, ratio * rewards, 0.0)
    z = (batch.samples - mean) / std
    dlogp_dmean = z / std
    var_ref = s_ref**2
    dkl_dmean = (mean - m_ref) / var_ref
    dmean = -(dsurr_dlogp[:, None] * dlogp_dmean - beta * dkl_dmean) / n
    dlog_std = -((dsurr_dlogp[:, None] * (z**2 - 1.0)).sum(axis=0) - beta * (std**2 / var_ref - 1.0).sum(axis=0)) / n
    grads = mlp_backward(policy.net, acts, dmean)
    grads["log_std"] = dlog_std
    info = {
        "kl": float(kl.mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > epsilon).mean()),
        "ratio_mean": float(ratio.mean()),
    }
    return loss, grads, info


def mean_kl(policy: PolicyParams, ref: PolicyParams, obs: np.ndarray) -> float:
    m, s = policy_forward(policy, obs)
    mr, sr = policy_forward(ref, obs)
    return float(gaussian_kl(m, s, mr, sr).mean())


@dataclass(frozen=True)
class TrainState:
    policy: PolicyParams
    old_policy: PolicyParams
    ref_policy: PolicyParams
    value: ValueParams | None
    opt_state: OptState
    iteration: int = 0


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    episodes: int
    steps: int
    mean_return: float
    mean_kl: float
    successes: int
    sr_window: float
    loss: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def init_train_state(cfg: RunConfig, master_seed: int, value: ValueParams | None = None) -> TrainState:
    rng = np.random.default_rng(derive_seed(master_seed, _INIT))
    policy = PolicyParams.init(cfg.encoder.feature_dim, cfg.train.hidden_size, rng, cfg.train.init_log_std)
    return TrainState(policy, policy, policy, value, OptState.zeros_like(policy.arrays()), 0)


def collect(
    policy: PolicyParams,
    value: ValueParams | None,
    scenarios: Sequence[Scenario],
    cfg: RunConfig,
    encoder: EncoderParams,
    master_seed: int,
    iteration: int,
) -> list[Episode]:
    pick = np.random.default_rng(derive_seed(master_seed, _PICK, iteration))
    chosen = pick.integers(len(scenarios), size=cfg.train.episodes_per_iteration)
    return [
        run_episode(
            policy,
            value,
            scenarios[int(s)],
            cfg.train.train_assistance,
            cfg.episode,
            cfg.reward,
            derive_seed(master_seed, _ROLLOUT, iteration, k),
            encoder=encoder,
            world=cfg.world,
        )
        for k, s in enumerate(chosen)
    ]


def update_policy(state: TrainState, batch: RolloutBatch, cfg: RunConfig, shuffle_seed: int) -> tuple[TrainState, float]:
    """K passes of minibatch Adam on the clipped objective; pi_old stays fixed throughout."""
    opt = cfg.optimizer
    rng = np.random.default_rng(shuffle_seed)
    policy, opt_state = state.policy, state.opt_state
    last_loss = float("nan")
    for _ in range(cfg.train.inner_epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), opt.batch_size):
            mb = batch.subset(order[start : start + opt.batch_size])
            last_loss, grads, _ = ppo_kl_loss(
                mb, policy, state.ref_policy, opt.epsilon, opt.beta, baseline=cfg.train.baseline, with_grad=True
            )
            policy, opt_state = opt_step(policy, grads, opt_state, opt)
    return TrainState(policy, state.old_policy, state.ref_policy, state.value, opt_state, state.iteration), last_loss


def train_iteration(
    state: TrainState,
    scenarios: Sequence[Scenario],
    cfg: RunConfig,
    encoder: EncoderParams,
    master_seed: int,
    recent: deque | None = None,
) -> tuple[TrainState, IterationStats]:
    if not scenarios:
        raise ValueError("need at least one training scenario")
    it = state.iteration + 1
    old = state.policy
    state = TrainState(state.policy, old, state.ref_policy, state.value, state.opt_state, state.iteration)
    episodes = collect(old, state.value, scenarios, cfg, encoder, master_seed, it)
    batch = RolloutBatch.from_episodes(episodes, cfg.train.w_dense, cfg.train.w_verif)
    state, loss = update_policy(state, batch, cfg, derive_seed(master_seed, _SHUFFLE, it))
    successes = sum(ep.outcome == "success" for ep in episodes)
    if recent is None:
        recent = deque(maxlen=10)
    recent.append((successes, len(episodes)))
    returns = [float(batch.rewards[batch.episode == i].sum()) for i in range(len(episodes))]
    stats = IterationStats(
        iteration=it,
        episodes=len(episodes),
        steps=len(batch),
        mean_return=float(np.mean(returns)),
        mean_kl=mean_kl(state.policy, state.ref_policy, batch.obs),
        successes=successes,
        sr_window=100.0 * sum(s for s, _ in recent) / sum(n for _, n in recent),
        loss=loss,
    )
    return TrainState(state.policy, old, state.ref_policy, state.value, state.opt_state, it), stats


def expert_episodes(
    scenarios: Sequence[Scenario], cfg: RunConfig, encoder: EncoderParams, master_seed: int, count: int, noise: float = 0.2
) -> list[Episode]:
    expert = OracleController(cfg.world.max_step_len, noise)
    return [
        run_episode(
            expert,
            None,
            scenarios[k % len(scenarios)],
            cfg.train.train_assistance,
            cfg.episode,
            cfg.reward,
            derive_seed(master_seed, _EXPERT, k),
            encoder=encoder,
            world=cfg.world,
        )
        for k in range(count)
    ]


def fit_value_on_experts(
    scenarios: Sequence[Scenario], cfg: RunConfig, encoder: EncoderParams, master_seed: int, heldout_fraction: float = 0.1
) -> tuple[ValueParams, ValueFitReport]:
    episodes = expert_episodes(scenarios, cfg, encoder, master_seed, cfg.train.expert_episodes)
    seqs = expert_sequences(episodes)
    n_hold = int(round(heldout_fraction * len(seqs)))
    train, hold = seqs[: len(seqs) - n_hold], seqs[len(seqs) - n_hold :]
    rng = np.random.default_rng(derive_seed(master_seed, _VALUE_FIT))
    v0 = ValueParams.init(cfg.encoder.feature_dim, cfg.train.hidden_size, rng)
    return fit_value_model(
        v0, train, cfg.train.margin, cfg.train.value_epochs, cfg.train.value_learning_rate, heldout=hold, rng=rng
    )


@dataclass
class TrainResult:
    state: TrainState
    value_report: ValueFitReport
    log: list[IterationStats] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def train_run(
    cfg: RunConfig,
    scenarios: Sequence[Scenario],
    master_seed: int,
    *,
    out_dir: Path | None = None,
    encoder: EncoderParams | None = None,
    on_iteration: Callable[[IterationStats], None] | None = None,
) -> TrainResult:
    """Fit the value model on expert rollouts, then run ``cfg.train.iterations`` policy iterations.

    With ``out_dir`` set, writes ``train_log.jsonl`` (deterministic),
    ``timing.jsonl`` (wall clock) and ``ckpt_{iteration}.json`` files; a
    checkpoint is flushed if the loop is interrupted.
    """
    from .checkpoint import save_checkpoint

    encoder = encoder or EncoderParams.from_config(cfg.encoder)
    value, report = fit_value_on_experts(scenarios, cfg, encoder, master_seed)
    log.info(
        "value model: loss %.4f -> %.4f, held-out monotone %.3f",
        report.epoch_losses[0],
        report.epoch_losses[-1],
        report.heldout_monotone,
    )
    state = init_train_state(cfg, master_seed, value)
    result = TrainResult(state, report)
    log_fh = timing_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w", encoding="utf-8")
        timing_fh = open(out_dir / "timing.jsonl", "w", encoding="utf-8")

    def checkpoint(st: TrainState) -> None:
        if out_dir is not None:
            result.checkpoints.append(save_checkpoint(out_dir / f"ckpt_{st.iteration}.json", st, cfg, master_seed))

    recent: deque = deque(maxlen=10)
    t0 = time.perf_counter()
    try:
        for _ in range(cfg.train.iterations):
            state, stats = train_iteration(state, scenarios, cfg, encoder, master_seed, recent)
            result.log.append(stats)
            if log_fh is not None:
                log_fh.write(json.dumps(stats.to_dict(), sort_keys=True) + "\n")
                timing_fh.write(json.dumps({"iteration": stats.iteration, "wall_time": time.perf_counter() - t0}) + "\n")
            if on_iteration is not None:
                on_iteration(stats)
            if stats.iteration % cfg.train.checkpoint_every == 0:
                checkpoint(state)
    except KeyboardInterrupt:
        checkpoint(state)
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
            timing_fh.close()
    if not result.checkpoints or result.checkpoints[-1].name != f"ckpt_{state.iteration}.json":
        checkpoint(state)
    result.state = state
    return result


def snapshot_controller(state: TrainState, deterministic: bool = False) -> GaussianController:
    return GaussianController(state.policy, deterministic)
