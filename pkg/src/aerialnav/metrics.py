"""Navigation metrics (NE, SR, OSR, SPL) and per-stratum aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

STRATA = ("full", "easy", "hard")
NE_MODES = ("raw", "normalized")


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    final_distance: float
    min_distance: float
    initial_distance: float
    agent_path_length: float
    oracle_path_length: float

    def __post_init__(self):
        for name in ("final_distance", "min_distance", "initial_distance", "agent_path_length", "oracle_path_length"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.min_distance > self.final_distance:
            raise ValueError("min_distance cannot exceed final_distance")

    @classmethod
    def from_episode(cls, episode, scenario, success_radius: float) -> EpisodeResult:
        return cls(
            success=episode_success([p.position for p in episode.poses()], scenario.goal_position, success_radius),
            final_distance=episode.final_distance,
            min_distance=episode.min_distance,
            initial_distance=episode.initial_distance,
            agent_path_length=episode.agent_path_length(),
            oracle_path_length=scenario.oracle_length,
        )


def episode_success(positions: Iterable[Sequence[float]], goal: Sequence[float], success_radius: float) -> bool:
    """True iff any visited position is within the (closed) success radius."""
    g = np.asarray(goal, dtype=float)
    return any(float(np.linalg.norm(np.asarray(p, dtype=float) - g)) <= success_radius for p in positions)


def oracle_success(min_distance: float, success_radius: float) -> bool:
    return min_distance <= success_radius


def normalized_error(final_distance: float, initial_distance: float, mode: str = "raw") -> float:
    if mode == "raw":
        return float(final_distance)
    if mode == "normalized":
        if not initial_distance > 0:
            raise ValueError("normalized error needs a positive initial distance")
        return final_distance / initial_distance
    raise ValueError(f"mode must be one of {NE_MODES}")


def spl(success: bool, oracle_len: float, agent_len: float) -> float:
    if not oracle_len > 0:
        raise ValueError("oracle path length must be positive")
    if not success:
        return 0.0
    return oracle_len / max(agent_len, oracle_len)


@dataclass(frozen=True)
class StratumMetrics:
    n: int
    ne: float
    sr: float
    osr: float
    spl: float


@dataclass(frozen=True)
class MetricsReport:
    """Metrics per (assistance, stratum); strata with no episodes are absent."""

    strata: dict[tuple[str, str], StratumMetrics]
    ne_mode: str = "raw"
    success_radius: float = 20.0

    def get(self, assistance: str, stratum: str = "full") -> StratumMetrics | None:
        return self.strata.get((assistance, stratum))

    def rows(self, method: str) -> list[dict]:
        out = []
        for (level, stratum), m in sorted(self.strata.items(), key=lambda kv: (kv[0][0], STRATA.index(kv[0][1]))):
            out.append(
                {
                    "method": method,
                    "assistance": level,
                    "stratum": stratum,
                    "n": m.n,
                    "ne_mode": self.ne_mode,
                    "NE": f"{m.ne:.2f}",
                    "SR": f"{m.sr:.2f}",
                    "OSR": f"{m.osr:.2f}",
                    "SPL": f"{m.spl:.2f}",
                }
            )
        return out


CSV_COLUMNS = ("method", "assistance", "stratum", "n", "ne_mode", "NE", "SR", "OSR", "SPL")


def to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _stratum(results: Sequence[EpisodeResult], success_radius: float, ne_mode: str) -> StratumMetrics:
    n = len(results)
    ne = sum(normalized_error(r.final_distance, r.initial_distance, ne_mode) for r in results) / n
    sr = 100.0 * sum(r.success for r in results) / n
    osr_hits = sum(r.success or oracle_success(r.min_distance, success_radius) for r in results)
    s = 100.0 * sum(spl(r.success, r.oracle_path_length, r.agent_path_length) for r in results) / n
    return StratumMetrics(n, ne, sr, 100.0 * osr_hits / n, s)


def aggregate(
    results: Sequence[EpisodeResult],
    labels: Sequence[tuple[str, str]],
    *,
    success_radius: float = 20.0,
    ne_mode: str = "raw",
) -> MetricsReport:
    """Aggregate per (assistance, difficulty) label plus a ``full`` stratum per assistance level.

    ``labels[i]`` is ``(assistance, difficulty)`` for ``results[i]``. OSR
    counts an episode when it succeeded or its closest approach is within
    ``success_radius``.
    """
    if len(results) != len(labels):
        raise ValueError("results and labels differ in length")
    groups: dict[tuple[str, str], list[EpisodeResult]] = {}
    for r, (level, difficulty) in zip(results, labels):
        if difficulty not in STRATA[1:]:
            raise ValueError(f"unknown difficulty {difficulty!r}")
        groups.setdefault((level, "full"), []).append(r)
        groups.setdefault((level, difficulty), []).append(r)
    strata = {k: _stratum(v, success_radius, ne_mode) for k, v in groups.items()}
    return MetricsReport(strata, ne_mode, success_radius)
