"""Command-line front end: generate, train, eval, ablate.

Relative ``--out`` paths are resolved under ``$AERIALNAV_OUTPUT_ROOT`` when
that variable is set. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .core import ASSISTANCE_LEVELS, ConfigError, RunConfig, format_config, load_config
from .encoder import EncoderParams
from .metrics import EpisodeResult, MetricsReport, aggregate, to_csv
from .neural import PolicyParams, ValueParams
from .rlopt import derive_seed, train_run
from .simworld import (
    GaussianController,
    GenerationExhaustedError,
    OracleController,
    RandomController,
    Scenario,
    ZeroController,
    generate_scenario,
    run_episode,
    write_episode_log,
)

log = logging.getLogger("aerialnav")

OUTPUT_ROOT_ENV = "AERIALNAV_OUTPUT_ROOT"
SUITE_INDEX = "index.json"
BASELINES = ("oracle", "zero", "random")
_EVAL_STREAM = 7
_SUBSET_STREAM = 8


class UsageError(Exception):
    pass


def resolve_out(path: str | Path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# suites

def cmd_generate(seed: int, n_easy: int, n_hard: int, out: Path, cfg: RunConfig | None = None) -> Path:
    """Write one JSON file per scenario plus ``index.json``."""
    if n_easy < 0 or n_hard < 0 or n_easy + n_hard < 1:
        raise UsageError("need --easy N and --hard M with N + M >= 1")
    cfg = cfg or RunConfig()
    out = Path(out)
    (out / "scenarios").mkdir(parents=True, exist_ok=True)
    entries = []
    for difficulty, count in (("easy", n_easy), ("hard", n_hard)):
        for k in range(count):
            sc = generate_scenario(seed * 100_000 + k, difficulty, cfg.world)
            rel = f"scenarios/{sc.scenario_id}.json"
            _write_json(out / rel, sc.to_dict())
            entries.append(
                {
                    "scenario_id": sc.scenario_id,
                    "difficulty": difficulty,
                    "oracle_length": sc.oracle_length,
                    "initial_distance": sc.initial_distance,
                    "file": rel,
                }
            )
    index = {
        "seed": seed,
        "counts": {"easy": n_easy, "hard": n_hard},
        "world": {k: v for k, v in cfg.flat().items() if k in cfg.world.__dataclass_fields__},
        "scenarios": entries,
    }
    _write_json(out / SUITE_INDEX, index)
    return out


def load_suite(path: Path) -> list[Scenario]:
    path = Path(path)
    try:
        index = json.loads((path / SUITE_INDEX).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scenario suite at {path}: {exc}") from exc
    return [Scenario.from_dict(json.loads((path / e["file"]).read_text(encoding="utf-8"))) for e in index["scenarios"]]


def sample_subset(n: int, fraction: float, master_seed: int) -> list[int]:
    """Indices of ceil(fraction * n) items chosen by a seeded shuffle, in suite order."""
    if not 0.0 < fraction <= 1.0:
        raise UsageError("--fraction must lie in (0, 1]")
    k = math.ceil(fraction * n - 1e-9)
    perm = np.random.default_rng(derive_seed(master_seed, _SUBSET_STREAM)).permutation(n)
    return sorted(int(i) for i in perm[:k])


# --------------------------------------------------------------------------
# training

def cmd_train(
    suite: Path,
    fraction: float,
    cfg: RunConfig,
    out: Path,
    master_seed: int | None = None,
    config_path: Path | None = None,
) -> dict:
    """Train on a seeded subset of the suite; writes manifest, checkpoints and logs."""
    scenarios = load_suite(suite)
    seed = cfg.episode.seed if master_seed is None else int(master_seed)
    picked = sample_subset(len(scenarios), fraction, seed)
    train_set = [scenarios[i] for i in picked]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "master_seed": seed,
        "suite": str(Path(suite).resolve()),
        "config_file": str(Path(config_path).resolve()) if config_path else None,
        "dataset_fraction": fraction,
        "suite_size": len(scenarios),
        "training_scenarios": [s.scenario_id for s in train_set],
        "scenario_counts": {d: sum(s.difficulty == d for s in train_set) for d in ("easy", "hard")},
        "assistance_levels": {"train": cfg.train.train_assistance, "eval": list(ASSISTANCE_LEVELS)},
        "config": {k: v for k, v in (line.split("=", 1) for line in format_config(cfg).splitlines())},
        "config_hash": cfg.config_hash(),
        "unseen_split_note": "held-out scenarios come from disjoint generator seed ranges, not unseen maps or objects",
    }
    _write_json(out / "manifest.json", manifest)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    result = train_run(
        cfg,
        train_set,
        seed,
        out_dir=out,
        on_iteration=lambda s: log.info("iter %d  return %.2f  kl %.4f  sr10 %.1f", s.iteration, s.mean_return, s.mean_kl, s.sr_window),
    )
    summary = {
        "final_checkpoint": str(result.checkpoints[-1]),
        "value_heldout_monotone": result.value_report.heldout_monotone,
        "value_loss_first": result.value_report.epoch_losses[0],
        "value_loss_last": result.value_report.epoch_losses[-1],
        "iterations": result.state.iteration,
    }
    _write_json(out / "summary.json", summary)
    return {"manifest": manifest, "summary": summary, "result": result}


def cmd_train_from_manifest(manifest_path: Path, out: Path) -> dict:
    m = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    from .core import config_from_mapping

    cfg = config_from_mapping(m["config"])
    return cmd_train(Path(m["suite"]), m["dataset_fraction"], cfg, out, m["master_seed"], m["config_file"])


# --------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class _EvalJob:
    index: int
    scenario: Scenario
    level: str
    seed: int


def _make_controller(policy: PolicyParams | str, cfg: RunConfig, deterministic: bool):
    if isinstance(policy, PolicyParams):
        return GaussianController(policy, deterministic)
    return {
        "oracle": OracleController(cfg.world.max_step_len),
        "zero": ZeroController(),
        "random": RandomController(),
    }[policy]


def _run_job(job: _EvalJob, policy, value: ValueParams | None, cfg: RunConfig, deterministic: bool):
    encoder = EncoderParams.from_config(cfg.encoder)
    ep = run_episode(
        _make_controller(policy, cfg, deterministic),
        value,
        job.scenario,
        job.level,
        cfg.episode,
        cfg.reward,
        job.seed,
        encoder=encoder,
        world=cfg.world,
    )
    return job.index, ep


def evaluate(
    scenarios: Sequence[Scenario],
    policy: PolicyParams | str,
    value: ValueParams | None,
    cfg: RunConfig,
    levels: Sequence[str],
    *,
    jobs: int = 1,
    deterministic: bool = False,
    episode_log: Path | None = None,
) -> tuple[MetricsReport, list]:
    """Run every scenario at every level; results are ordered by (level, scenario), never by completion."""
    work = [
        _EvalJob(k, sc, level, derive_seed(cfg.episode.seed, _EVAL_STREAM, ASSISTANCE_LEVELS.index(level), i))
        for k, (level, i, sc) in enumerate((lv, i, sc) for lv in levels for i, sc in enumerate(scenarios))
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_job, work, *zip(*[(policy, value, cfg, deterministic)] * len(work))))
    else:
        done = [_run_job(j, policy, value, cfg, deterministic) for j in work]
    done.sort(key=lambda kv: kv[0])
    episodes = [ep for _, ep in done]
    results = [EpisodeResult.from_episode(ep, j.scenario, cfg.episode.success_radius) for j, ep in zip(work, episodes)]
    labels = [(j.level, j.scenario.difficulty) for j in work]
    report = aggregate(results, labels, success_radius=cfg.episode.success_radius)
    if episode_log is not None:
        episode_log.parent.mkdir(parents=True, exist_ok=True)
        with open(episode_log, "w", encoding="utf-8") as fh:
            for j, ep in zip(work, episodes):
                write_episode_log(
                    ep,
                    fh,
                    {
                        "difficulty": j.scenario.difficulty,
                        "encoder_seed": cfg.encoder.encoder_seed,
                        "feature_dim": cfg.encoder.feature_dim,
                    },
                )
    return report, episodes


def parse_levels(text: str) -> list[str]:
    levels = ["L1", "L2", "L3"] if text == "all" else [s.strip() for s in text.split(",") if s.strip()]
    bad = [lv for lv in levels if lv not in ASSISTANCE_LEVELS]
    if bad or not levels:
        raise UsageError(f"assistance levels must be drawn from {ASSISTANCE_LEVELS} or 'all'")
    return levels


def cmd_eval(
    suite: Path,
    out: Path,
    levels: Sequence[str],
    *,
    ckpt: Path | None = None,
    baseline: str | None = None,
    cfg: RunConfig | None = None,
    label: str | None = None,
    jobs: int = 1,
    deterministic: bool = False,
) -> MetricsReport:
    """Evaluate a checkpoint (or a built-in baseline) and write the metrics CSV plus episode logs."""
    if (ckpt is None) == (baseline is None):
        raise UsageError("give exactly one of --ckpt or --baseline")
    scenarios = load_suite(suite)
    value = None
    if ckpt is not None:
        state, ckpt_cfg, _ = load_checkpoint(ckpt, expect=cfg)
        policy: PolicyParams | str = state.policy
        value = state.value
        cfg = ckpt_cfg
        label = label or Path(ckpt).stem
    else:
        if baseline not in BASELINES:
            raise UsageError(f"--baseline must be one of {BASELINES}")
        policy = baseline
        cfg = cfg or RunConfig()
        label = label or baseline
    out = Path(out)
    report, _ = evaluate(
        scenarios,
        policy,
        value,
        cfg,
        levels,
        jobs=jobs,
        deterministic=deterministic,
        episode_log=out.with_name(out.stem + ".episodes.jsonl"),
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_csv(report.rows(label)), encoding="utf-8")
    return report


# --------------------------------------------------------------------------
# ablation

def parse_r_levels(text: str) -> list[float]:
    try:
        levels = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --r-levels {text!r}") from None
    if len(levels) < 2:
        raise UsageError("--r-levels needs at least two thresholds")
    if any(not lv > 0 for lv in levels):
        raise UsageError("thresholds must be positive or inf")
    return levels


def r_label(r_level: float) -> str:
    return "inf" if math.isinf(r_level) else repr(float(r_level))


def cmd_ablate(
    suite: Path,
    r_levels: Sequence[float],
    cfg: RunConfig,
    out: Path,
    *,
    eval_suite: Path | None = None,
    fraction: float = 1.0,
    master_seed: int | None = None,
    levels: Sequence[str] = ASSISTANCE_LEVELS,
    jobs: int = 1,
) -> dict[str, MetricsReport]:
    """Train and evaluate one run per threshold, all with the same seed and scenarios."""
    if len(r_levels) < 2:
        raise UsageError("--r-levels needs at least two thresholds")
    out = Path(out)
    eval_scenarios = load_suite(eval_suite or suite)
    reports: dict[str, MetricsReport] = {}
    rows = []
    for r in r_levels:
        name = r_label(r)
        run_cfg = cfg.replace(r_level=r)
        run_dir = out / f"r_{name}"
        trained = cmd_train(suite, fraction, run_cfg, run_dir, master_seed)
        policy = trained["result"].state.policy
        report, _ = evaluate(
            eval_scenarios, policy, trained["result"].state.value, run_cfg, levels, jobs=jobs, episode_log=run_dir / "eval.episodes.jsonl"
        )
        (run_dir / "eval.csv").write_text(to_csv(report.rows(name)), encoding="utf-8")
        reports[name] = report
        rows.extend(report.rows(name))
    (out / "ablation.csv").write_text(to_csv(_ablation_order(rows, r_levels)), encoding="utf-8")
    return reports


def _parse_label(name: str) -> float:
    return math.inf if name == "inf" else float(name)


def _ablation_order(rows: list[dict], r_levels: Sequence[float]) -> list[dict]:
    # one row group per threshold, each holding its assistance levels and strata
    strata = {"full": 0, "easy": 1, "hard": 2}
    return sorted(rows, key=lambda r: (list(r_levels).index(_parse_label(r["method"])), r["assistance"], strata[r["stratum"]]))


# --------------------------------------------------------------------------
# argv

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aerialnav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a frozen scenario suite")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--easy", type=int, default=0)
    g.add_argument("--hard", type=int, default=0)
    g.add_argument("--config", type=Path)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="fit the value model and fine-tune the policy")
    t.add_argument("--suite", type=Path)
    t.add_argument("--fraction", type=float, default=1.0)
    t.add_argument("--config", type=Path)
    t.add_argument("--seed", type=int, help="master seed (default: seed= from the config)")
    t.add_argument("--manifest", type=Path, help="rerun a previous training manifest")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint or baseline on a suite")
    e.add_argument("--suite", type=Path, required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt", type=Path)
    src.add_argument("--baseline", choices=BASELINES)
    e.add_argument("--assistance", default="L1", help="L1, L2, L3, a comma list, or 'all'")
    e.add_argument("--config", type=Path, help="refuse to run unless the checkpoint matches this config")
    e.add_argument("--label")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--deterministic", action="store_true", help="act with the policy mean instead of sampling")
    e.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="train+evaluate one run per reward threshold")
    a.add_argument("--suite", type=Path, required=True)
    a.add_argument("--eval-suite", type=Path)
    a.add_argument("--r-levels", default="1.0,3.0,5.0,inf")
    a.add_argument("--config", type=Path)
    a.add_argument("--fraction", type=float, default=1.0)
    a.add_argument("--seed", type=int)
    a.add_argument("--assistance", default="all")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", required=True)
    return p


def _config(path: Path | None) -> RunConfig:
    return load_config(path) if path is not None else RunConfig()


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cmd_generate(args.seed, args.easy, args.hard, resolve_out(args.out), _config(args.config))
        elif args.command == "train":
            if args.manifest is not None:
                cmd_train_from_manifest(args.manifest, resolve_out(args.out))
            else:
                if args.suite is None:
                    raise UsageError("train needs --suite (or --manifest)")
                cmd_train(args.suite, args.fraction, _config(args.config), resolve_out(args.out), args.seed, args.config)
        elif args.command == "eval":
            cmd_eval(
                args.suite,
                resolve_out(args.out),
                parse_levels(args.assistance),
                ckpt=args.ckpt,
                baseline=args.baseline,
                cfg=load_config(args.config) if args.config else None,
                label=args.label,
                jobs=args.jobs,
                deterministic=args.deterministic,
            )
        elif args.command == "ablate":
            cmd_ablate(
                args.suite,
                parse_r_levels(args.r_levels),
                _config(args.config),
                resolve_out(args.out),
                eval_suite=args.eval_suite,
                fraction=args.fraction,
                master_seed=args.seed,
                levels=parse_levels(args.assistance),
                jobs=args.jobs,
            )
    except UsageError as exc:
        print(f"aerialnav: usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"aerialnav: configuration error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, GenerationExhaustedError, OSError, RuntimeError, ValueError) as exc:
        print(f"aerialnav: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
