"""Acceptance criteria 1-10.

Each test prints one ``PASS``/``FAIL`` line with the measured numbers; run
with ``pytest -s tests/test_acceptance.py`` to see them.
"""

import hashlib
import math
import time

import numpy as np
import pytest
from gradcheck import ppo_grad_error, ranking_grad_error

from aerialnav.core import RunConfig
from aerialnav.encoder import EncoderParams
from aerialnav.harness import cmd_ablate, cmd_eval, cmd_generate, cmd_train, cmd_train_from_manifest, evaluate, load_suite
from aerialnav.metrics import EpisodeResult, aggregate
from aerialnav.neural import ValueParams
from aerialnav.rewards import (
    dense_trajectory_reward,
    fit_value_model,
    monotone_pair_fraction,
    per_step_shaped_reward,
    step_weight,
    verifiable_reward,
)
from aerialnav.rlopt import expert_episodes, init_train_state, train_run
from aerialnav.simworld import expert_sequences, generate_scenario


def verdict(n, title, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {title} | {detail}")
    assert ok, detail


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "timing.jsonl":
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# 1 -------------------------------------------------------------------------

def test_c01_gradient_fidelity():
    t0 = time.perf_counter()
    rank = [ranking_grad_error(1000 + s) for s in range(100)]
    ppo = [ppo_grad_error(2000 + s) for s in range(100)]
    elapsed = time.perf_counter() - t0
    ok = max(rank) < 1e-4 and max(ppo) < 1e-4 and elapsed < 60
    verdict(1, "gradient fidelity", ok, f"max rel err ranking {max(rank):.2e}, objective {max(ppo):.2e}, {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------

def test_c02_telescoping():
    rng = np.random.default_rng(2)
    worst_tele, worst_split = 0.0, 0.0
    for _ in range(1000):
        vs = rng.uniform(-10, 10, int(rng.integers(2, 60))).tolist()
        worst_tele = max(worst_tele, abs(dense_trajectory_reward(vs, 1.0, "paper-literal") - (vs[0] - vs[-1])))
        gamma = float(rng.uniform(0.5, 1.0))
        for mode in ("paper-literal", "potential"):
            parts = sum(
                step_weight(t, gamma, mode) * per_step_shaped_reward(vs[t - 1], vs[t], gamma, mode, t)
                for t in range(1, len(vs))
            )
            worst_split = max(worst_split, abs(parts - dense_trajectory_reward(vs, gamma, mode)))
    ok = worst_tele <= 1e-12 and worst_split == 0.0
    verdict(2, "telescoping identity", ok, f"max |literal - (v1 - v_n+1)| {worst_tele:.1e}, max per-step mismatch {worst_split:.1e}")


# 3 -------------------------------------------------------------------------

def test_c03_verifiable_reward():
    cases = [verifiable_reward(0.5, 5.0) == 2.0, verifiable_reward(0.9, 5.0) == 5.0, verifiable_reward(0.0, 5.0) == 1.0]
    grid = np.linspace(-1.0, 1.0, 1000)
    monotone = capped = True
    for cap in (1.0, 3.0, 5.0, math.inf):
        r = np.array([verifiable_reward(s, cap) for s in grid])
        monotone &= bool(np.all(np.diff(r) >= 0))
        capped &= bool(np.all(r <= (cap if math.isfinite(cap) else 1e6)))
    ok = all(cases) and monotone and capped
    verdict(3, "verifiable reward", ok, f"hand cases {sum(cases)}/3, monotone {monotone}, capped {capped}")


# 4 -------------------------------------------------------------------------

def _hand_results():
    # distances are multiples of 0.5 and lengths give dyadic SPL ratios, so all sums are exact
    finals = [0.0, 10.0, 19.5, 20.0, 35.5, 120.0, 250.0]
    oracle_agent = [(100.0, 100.0), (100.0, 200.0), (300.0, 400.0), (64.0, 256.0), (50.0, 40.0)]
    out = []
    for i in range(50):
        final = finals[i % len(finals)]
        success = final <= 20.0 and i % 3 != 0
        minimum = final if i % 4 else final / 2
        oracle, agent = oracle_agent[i % len(oracle_agent)]
        out.append(EpisodeResult(success, final, minimum, 100.0 + i, agent, oracle))
    labels = [(("L1", "L2", "L3")[i % 3], ("easy", "hard")[(i // 3) % 2]) for i in range(50)]
    return out, labels


def _brute_force(results, labels, radius):
    table = {}
    for level in sorted({lv for lv, _ in labels}):
        for stratum in ("full", "easy", "hard"):
            rows = [r for r, (lv, d) in zip(results, labels) if lv == level and stratum in ("full", d)]
            if not rows:
                continue
            n = len(rows)
            ne_sum = sr_hits = osr_hits = spl_sum = 0.0
            for r in rows:
                ne_sum += r.final_distance
                sr_hits += 1 if r.success else 0
                osr_hits += 1 if (r.success or r.min_distance <= radius) else 0
                spl_sum += r.oracle_path_length / max(r.agent_path_length, r.oracle_path_length) if r.success else 0.0
            table[(level, stratum)] = (n, ne_sum / n, 100.0 * sr_hits / n, 100.0 * osr_hits / n, 100.0 * spl_sum / n)
    return table


def test_c04_metrics_oracle():
    results, labels = _hand_results()
    report = aggregate(results, labels, success_radius=20.0)
    expected = _brute_force(results, labels, 20.0)
    got = {k: (m.n, m.ne, m.sr, m.osr, m.spl) for k, m in report.strata.items()}
    exact = got == expected

    rng = np.random.default_rng(4)
    chain_ok, strata_checked = True, 0
    for _ in range(100):
        batch, blabels = [], []
        for _ in range(100):
            success = bool(rng.random() < 0.4)
            final = float(rng.uniform(0, 20)) if success else float(rng.uniform(0, 300))
            minimum = final * float(rng.uniform(0, 1))
            batch.append(EpisodeResult(success, final, minimum, 200.0, float(rng.uniform(10, 500)), float(rng.uniform(10, 500))))
            blabels.append((str(rng.choice(["L1", "L2", "L3"])), str(rng.choice(["easy", "hard"]))))
        for m in aggregate(batch, blabels).strata.values():
            strata_checked += 1
            chain_ok &= m.spl <= m.sr <= m.osr
    verdict(4, "metrics oracle equivalence", exact and chain_ok,
            f"{len(got)} strata match brute force: {exact}; SPL<=SR<=OSR over 10000 results in {strata_checked} strata: {chain_ok}")


# 5 -------------------------------------------------------------------------

def test_c05_kl_anchoring():
    t0 = time.perf_counter()
    scenarios = [generate_scenario(500 + i, "easy", RunConfig().world) for i in range(5)]
    base = RunConfig().replace(iterations=10, episodes_per_iteration=8, expert_episodes=20, value_epochs=5)
    kls = {}
    for beta in (1e6, 0.1):
        res = train_run(base.replace(beta=beta), scenarios, 7)
        kls[beta] = res.log[-1].mean_kl
    elapsed = time.perf_counter() - t0
    ok = kls[1e6] < kls[0.1] and elapsed < 600
    verdict(5, "KL anchoring", ok, f"final KL beta=1e6 {kls[1e6]:.3e}, beta=0.1 {kls[0.1]:.3e}, {elapsed:.0f}s")


# 6 -------------------------------------------------------------------------

def test_c06_value_monotonicity():
    t0 = time.perf_counter()
    cfg = RunConfig()
    enc = EncoderParams.from_config(cfg.encoder)
    train_sc = [generate_scenario(600 + i, ("easy", "hard")[i % 2], cfg.world) for i in range(20)]
    held_sc = [generate_scenario(700 + i, ("easy", "hard")[i % 2], cfg.world) for i in range(10)]
    train_eps = expert_episodes(train_sc, cfg, enc, 6, 200)
    held_eps = expert_episodes(held_sc, cfg, enc, 66, 40)
    rng = np.random.default_rng(6)
    v0 = ValueParams.init(cfg.encoder.feature_dim, cfg.train.hidden_size, rng)
    v, report = fit_value_model(
        v0, expert_sequences(train_eps), cfg.train.margin, cfg.train.value_epochs, cfg.train.value_learning_rate, rng=rng
    )
    frac = monotone_pair_fraction(v, expert_sequences(held_eps))
    elapsed = time.perf_counter() - t0
    ok = frac >= 0.9 and elapsed < 900
    verdict(6, "value-model monotonicity", ok,
            f"held-out monotone pairs {frac:.3f} on unseen scenarios (train {report.train_monotone:.3f}), {elapsed:.0f}s")


# 7 -------------------------------------------------------------------------

ABLATION_LEVELS = (1.0, 3.0, 5.0, math.inf)
ABLATION_SEEDS = (0, 1, 2)
ABLATION_CFG = RunConfig().replace(obstacle_count=0)


def test_c07_ablation_trend(tmp_path_factory):
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("ablation")
    cmd_generate(100, 50, 50, root / "suite", ABLATION_CFG)
    lines, ok = [], True
    for seed in ABLATION_SEEDS:
        reports = cmd_ablate(root / "suite", list(ABLATION_LEVELS), ABLATION_CFG, root / f"seed{seed}",
                             fraction=0.25, master_seed=seed, levels=["L1"])
        sr = {name: rep.get("L1").sr for name, rep in reports.items()}
        holds = sr["5.0"] >= sr["inf"] and sr["inf"] <= min(sr.values())
        ok &= holds
        lines.append(f"seed {seed}: " + " ".join(f"{k}={v:.0f}" for k, v in sr.items()))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 7200
    verdict(7, "threshold ablation trend", ok, "; ".join(lines) + f" (L1 SR %, full stratum), {elapsed / 60:.0f} min")


# 8 and 10 ------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_easy(tmp_path_factory):
    root = tmp_path_factory.mktemp("learning")
    cfg = RunConfig().replace(obstacle_count=0)
    cmd_generate(11, 25, 0, root / "train", cfg)
    cmd_generate(12, 50, 0, root / "heldout", cfg)
    t0 = time.perf_counter()
    out = cmd_train(root / "train", 1.0, cfg, root / "run", 0)
    return root, cfg, out["result"], time.perf_counter() - t0


def test_c08_learning_signal(trained_easy):
    root, cfg, result, train_time = trained_easy
    t0 = time.perf_counter()
    heldout = load_suite(root / "heldout")
    untrained = init_train_state(cfg, 0)
    before, _ = evaluate(heldout, untrained.policy, None, cfg, ["L1"])
    after, _ = evaluate(heldout, result.state.policy, None, cfg, ["L1"])
    elapsed = train_time + time.perf_counter() - t0
    gain = after.get("L1").sr - before.get("L1").sr
    ok = result.state.iteration == 200 and gain >= 20.0 and elapsed < 1800
    verdict(8, "learning signal", ok,
            f"L1 SR untrained {before.get('L1').sr:.0f}% -> trained {after.get('L1').sr:.0f}% (+{gain:.0f} pp), {elapsed:.0f}s")


def test_c10_assistance_ordering(trained_easy, tmp_path):
    root, cfg, result, _ = trained_easy
    report = cmd_eval(root / "heldout", tmp_path / "levels.csv", ["L1", "L2", "L3"], ckpt=result.checkpoints[-1])
    sr = [report.get(level).sr for level in ("L1", "L2", "L3")]
    ok = sr[0] >= sr[1] >= sr[2]
    verdict(10, "assistance ordering", ok, f"held-out SR L1 {sr[0]:.0f}% L2 {sr[1]:.0f}% L3 {sr[2]:.0f}%")


# 9 -------------------------------------------------------------------------

def test_c09_determinism(tmp_path):
    cfg = RunConfig().replace(iterations=3, episodes_per_iteration=4, expert_episodes=10, value_epochs=3, checkpoint_every=1)
    digests = []
    for tag in ("a", "b"):
        root = tmp_path / tag
        cmd_generate(3, 2, 2, root / "suite", cfg)
        digests.append({"suite": digest(root / "suite")})
    for tag in ("a", "b"):
        root = tmp_path / tag
        if tag == "a":
            cmd_train(root / "suite", 0.5, cfg, root / "run", 9)
        else:
            cmd_train_from_manifest(tmp_path / "a" / "run" / "manifest.json", root / "run")
        cmd_eval(root / "suite", root / "eval" / "table.csv", ["L1", "L2", "L3"], ckpt=root / "run" / "ckpt_3.json")
    same = {
        "suite": digests[0]["suite"] == digests[1]["suite"],
        "checkpoints": all(
            (tmp_path / "a" / "run" / f"ckpt_{i}.json").read_bytes() == (tmp_path / "b" / "run" / f"ckpt_{i}.json").read_bytes()
            for i in (1, 2, 3)
        ),
        "train log": (tmp_path / "a" / "run" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "run" / "train_log.jsonl").read_bytes(),
        "metric tables": digest(tmp_path / "a" / "eval") == digest(tmp_path / "b" / "eval"),
    }
    verdict(9, "determinism", all(same.values()), ", ".join(f"{k} identical: {v}" for k, v in same.items()))
