"""Synthetic aerial world: scenario generation, assistance hints and the episode loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from .core import (
    ASSISTANCE_LEVELS,
    Action,
    EpisodeConfig,
    GoalSpec,
    Pose,
    RewardConfig,
    Trajectory,
    Waypoint,
    WorldConfig,
    apply_action,
    euclidean_distance,
)
from .encoder import EncoderParams, cosine_similarity, encode_goal, encode_state
from .neural import PolicyParams, ValueParams, gaussian_log_prob, policy_forward, value_forward
from .planner import (
    PLANNER_MARGIN,
    Box,
    Obstacle,
    Sphere,
    UnreachableError,
    clearance_vector,
    collides,
    collision_mask,
    obstacle_from_dict,
    oracle_shortest_path,
)
from .rewards import per_step_shaped_reward, verifiable_reward

DIFFICULTIES = ("easy", "hard")
OUTCOMES = ("success", "collision", "timeout")


class GenerationExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    seed: int
    difficulty: str
    start: Pose
    goal: GoalSpec
    obstacles: tuple[Obstacle, ...]
    oracle_path: Trajectory

    @property
    def goal_position(self) -> np.ndarray:
        return np.asarray(self.goal.goal_position)

    @property
    def initial_distance(self) -> float:
        return euclidean_distance(self.start.position, self.goal.goal_position)

    @property
    def oracle_length(self) -> float:
        return self.oracle_path.path_length()

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "difficulty": self.difficulty,
            "start": self.start.as_list(),
            "goal_position": list(self.goal.goal_position),
            "goal_token_seed": self.goal.goal_token_seed,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "oracle_path": [w.as_list() for w in self.oracle_path.waypoints],
            "oracle_length": self.oracle_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return cls(
            scenario_id=d["scenario_id"],
            seed=int(d["seed"]),
            difficulty=d["difficulty"],
            start=Pose.from_list(d["start"]),
            goal=GoalSpec(tuple(d["goal_position"]), int(d["goal_token_seed"])),
            obstacles=tuple(obstacle_from_dict(o) for o in d["obstacles"]),
            oracle_path=Trajectory(tuple(Pose.from_list(w) for w in d["oracle_path"])),
        )


def _difficulty_of(length: float, world: WorldConfig) -> str:
    return "easy" if length < world.easy_hard_split else "hard"


def _random_obstacles(rng: np.random.Generator, start: np.ndarray, goal: np.ndarray, world: WorldConfig) -> list[Obstacle]:
    obstacles: list[Obstacle] = []
    axis = goal - start
    lateral = np.array([-axis[1], axis[0], 0.0])
    lateral /= max(np.linalg.norm(lateral), 1e-9)
    for _ in range(world.obstacle_count):
        anchor = start + rng.uniform(0.2, 0.8) * axis + rng.uniform(-40.0, 40.0) * lateral
        if rng.random() < 0.7:
            half = rng.uniform(5.0, 20.0, size=2)
            height = rng.uniform(30.0, world.z_max + 10.0)
            obstacles.append(Box((anchor[0] - half[0], anchor[1] - half[1], 0.0), (anchor[0] + half[0], anchor[1] + half[1], height)))
        else:
            center = (anchor[0], anchor[1], float(np.clip(anchor[2] + rng.uniform(-15.0, 15.0), world.z_min, world.z_max)))
            obstacles.append(Sphere(center, rng.uniform(8.0, 20.0)))
    return obstacles


def generate_scenario(seed: int, difficulty: str, world: WorldConfig | None = None) -> Scenario:
    """Deterministic scenario whose oracle length falls in the requested class.

    Start/goal straight-line distance is drawn from [min_start_goal, split)
    for easy and [split, max_start_goal] for hard; draws are rejected until a
    collision-free oracle path of the right class exists.
    """
    world = world or WorldConfig()
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}")
    rng = np.random.default_rng([int(seed), DIFFICULTIES.index(difficulty)])
    inflate = world.drone_radius + PLANNER_MARGIN
    for _ in range(world.max_resample):
        if difficulty == "easy":
            dist = rng.uniform(world.min_start_goal, world.easy_hard_split)
        else:
            dist = rng.uniform(world.easy_hard_split, world.max_start_goal)
        heading = rng.uniform(-math.pi, math.pi)
        start = np.array([rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0), rng.uniform(world.z_min + 10.0, 70.0)])
        dz_max = min(0.3 * dist, 30.0)
        dz = float(np.clip(start[2] + rng.uniform(-dz_max, dz_max), world.z_min + 5.0, world.z_max - 5.0) - start[2])
        horiz = math.sqrt(max(dist * dist - dz * dz, 0.0))
        goal = start + np.array([horiz * math.cos(heading), horiz * math.sin(heading), dz])
        token_seed = int(rng.integers(2**31 - 1))
        obstacles = _random_obstacles(rng, start, goal, world)
        if collision_mask(np.stack([start, goal]), obstacles, inflate).any():
            continue
        start_pose = Pose.at(start)
        try:
            path = oracle_shortest_path(
                start_pose,
                goal,
                obstacles,
                resolution=world.grid_resolution,
                drone_radius=world.drone_radius,
                z_min=world.z_min,
                z_max=world.z_max,
            )
        except UnreachableError:
            continue
        if _difficulty_of(path.path_length(), world) != difficulty:
            continue
        if not world.min_start_goal <= euclidean_distance(start, goal) <= world.max_start_goal:
            continue
        return Scenario(
            scenario_id=f"{difficulty}-{seed}",
            seed=int(seed),
            difficulty=difficulty,
            start=start_pose,
            goal=GoalSpec(tuple(goal), token_seed),
            obstacles=tuple(obstacles),
            oracle_path=path,
        )
    raise GenerationExhaustedError(f"no valid {difficulty} scenario for seed {seed} after {world.max_resample} draws")


# --------------------------------------------------------------------------
# oracle guidance

def _project_on_path(pos: np.ndarray, path: np.ndarray) -> tuple[float, int]:
    """Distance from ``pos`` to the polyline and the index of the closest segment."""
    if len(path) == 1:
        return float(np.linalg.norm(pos - path[0])), 0
    a, b = path[:-1], path[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    t = np.clip(((pos - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    d = np.linalg.norm(a + t[:, None] * ab - pos, axis=1)
    # on a shared vertex prefer the later segment so progress never stalls
    i = int(np.flatnonzero(d <= d.min() + 1e-9)[-1])
    return float(d[i]), i


def path_deviation(pose: Pose, scenario: Scenario) -> float:
    return _project_on_path(pose.position, scenario.oracle_path.positions())[0]


def next_oracle_waypoint(pose: Pose, scenario: Scenario) -> np.ndarray:
    path = scenario.oracle_path.positions()
    if len(path) == 1:
        return path[0]
    _, i = _project_on_path(pose.position, path)
    if i + 2 < len(path) and np.linalg.norm(path[i + 1] - pose.position) < 1e-6:
        return path[i + 2]
    return path[i + 1]


def assistance_hint(
    level: str,
    pose: Pose,
    scenario: Scenario,
    deviation: float | None = None,
    helper_threshold: float = 30.0,
) -> np.ndarray | None:
    """L1: next oracle waypoint always; L2: only when off the oracle path by more than the threshold; L3: never."""
    if level not in ASSISTANCE_LEVELS:
        raise ValueError(f"assistance level must be one of {ASSISTANCE_LEVELS}")
    if level == "L3":
        return None
    if level == "L2":
        if deviation is None:
            deviation = path_deviation(pose, scenario)
        if not deviation > helper_threshold:
            return None
    return next_oracle_waypoint(pose, scenario)


# --------------------------------------------------------------------------
# controllers

class Controller(Protocol):
    def act(self, obs: np.ndarray, pose: Pose, scenario: Scenario, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        """Return a normalized action sample in R^6 and its log-probability."""


def sample_to_action(u: np.ndarray, world: WorldConfig) -> Action:
    """Clip a normalized sample to [-1, 1] and scale to actuation limits."""
    c = np.clip(u, -1.0, 1.0)
    return Action.from_list(np.concatenate([c[:3] * world.max_step_len, c[3:] * world.max_turn]))


@dataclass(frozen=True)
class GaussianController:
    params: PolicyParams
    deterministic: bool = False

    def act(self, obs, pose, scenario, rng):
        mean, std = policy_forward(self.params, obs)
        u = mean if self.deterministic else mean + std * rng.standard_normal(mean.shape)
        return u, float(gaussian_log_prob(mean, std, u))


@dataclass(frozen=True)
class OracleController:
    """Flies at full speed toward the next oracle waypoint.

    ``noise`` adds Gaussian jitter (normalized units) to the translational part.
    """

    max_step_len: float = 5.0
    noise: float = 0.0

    def act(self, obs, pose, scenario, rng):
        delta = next_oracle_waypoint(pose, scenario) - pose.position
        peak = float(np.abs(delta).max())
        step = delta * min(1.0, self.max_step_len / peak) if peak > 0 else delta
        u = np.concatenate([step / self.max_step_len, np.zeros(3)])
        if self.noise > 0:
            u[:3] += self.noise * rng.standard_normal(3)
        return u, 0.0


class ZeroController:
    def act(self, obs, pose, scenario, rng):
        return np.zeros(6), 0.0


class RandomController:
    def act(self, obs, pose, scenario, rng):
        return rng.uniform(-1.0, 1.0, size=6), float(6 * math.log(0.5))


# --------------------------------------------------------------------------
# episodes

@dataclass(frozen=True)
class StepRecord:
    t: int
    pose: Pose
    observation: np.ndarray = field(repr=False)
    action: Action
    sample: np.ndarray = field(repr=False)
    log_prob: float
    value: float
    next_value: float
    reward_dense: float
    reward_verifiable: float
    similarity: float
    collided: bool
    hint: tuple[float, float, float] | None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "pose": self.pose.as_list(),
            "observation": self.observation.tolist(),
            "action": self.action.as_list(),
            "sample": self.sample.tolist(),
            "log_prob": self.log_prob,
            "value": self.value,
            "next_value": self.next_value,
            "reward_dense": self.reward_dense,
            "reward_verifiable": self.reward_verifiable,
            "similarity": self.similarity,
            "collided": self.collided,
            "hint": list(self.hint) if self.hint is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StepRecord:
        return cls(
            t=d["t"],
            pose=Pose.from_list(d["pose"]),
            observation=np.asarray(d["observation"], dtype=float),
            action=Action.from_list(d["action"]),
            sample=np.asarray(d["sample"], dtype=float),
            log_prob=d["log_prob"],
            value=d["value"],
            next_value=d["next_value"],
            reward_dense=d["reward_dense"],
            reward_verifiable=d["reward_verifiable"],
            similarity=d["similarity"],
            collided=d["collided"],
            hint=tuple(d["hint"]) if d["hint"] is not None else None,
        )


@dataclass(frozen=True)
class Episode:
    scenario_id: str
    seed: int
    assistance: str
    records: tuple[StepRecord, ...]
    outcome: str
    final_distance: float
    min_distance: float
    initial_distance: float
    start: Pose
    final_observation: np.ndarray = field(repr=False)

    def poses(self) -> list[Pose]:
        return [self.start] + [r.pose for r in self.records]

    def agent_path_length(self) -> float:
        return Trajectory(tuple(self.poses())).path_length()

    def header(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "assistance": self.assistance,
            "outcome": self.outcome,
            "final_distance": self.final_distance,
            "min_distance": self.min_distance,
            "initial_distance": self.initial_distance,
            "start": self.start.as_list(),
            "final_observation": self.final_observation.tolist(),
            "n_records": len(self.records),
        }


def run_episode(
    policy: Controller | PolicyParams,
    value_model: ValueParams | None,
    scenario: Scenario,
    assistance: str,
    episode_cfg: EpisodeConfig,
    reward_cfg: RewardConfig,
    rng_seed: int,
    *,
    encoder: EncoderParams,
    world: WorldConfig | None = None,
) -> Episode:
    """Roll out one episode: observe, hint, act, then check collision and arrival.

    The verifiable and dense rewards of step t are computed on the state the
    action leads to, so they depend on the action taken.
    """
    world = world or WorldConfig()
    controller = GaussianController(policy) if isinstance(policy, PolicyParams) else policy
    rng = np.random.default_rng(rng_seed)
    goal = scenario.goal
    goal_pos = scenario.goal_position
    target_features = encode_goal(encoder, Waypoint(goal.goal_position, episode_cfg.success_radius), goal)

    def observe(pose: Pose) -> tuple[np.ndarray, np.ndarray | None]:
        hint = assistance_hint(assistance, pose, scenario, helper_threshold=world.helper_threshold)
        clear = clearance_vector(pose.position, scenario.obstacles, world.clearance_range)
        if clear is not None:
            clear = clear / world.clearance_range
        return encode_state(encoder, pose, goal, hint, clear), hint

    def value(obs: np.ndarray) -> float:
        return value_forward(value_model, obs) if value_model is not None else 0.0

    pose = scenario.start
    obs, hint = observe(pose)
    v = value(obs)
    records: list[StepRecord] = []
    min_dist = euclidean_distance(pose.position, goal_pos)
    outcome = "timeout"
    for t in range(1, episode_cfg.max_steps + 1):
        u, logp = controller.act(obs, pose, scenario, rng)
        action = sample_to_action(u, world)
        new_pose = apply_action(pose, action, world.max_step_len, world.max_turn)
        hit = collides(new_pose, scenario.obstacles, world.drone_radius)
        next_obs, next_hint = observe(new_pose)
        v_next = value(next_obs)
        sim = cosine_similarity(next_obs, target_features)
        dense = per_step_shaped_reward(v, v_next, reward_cfg.gamma, reward_cfg.shaping_mode, t)
        records.append(
            StepRecord(
                t=t,
                pose=new_pose,
                observation=obs,
                action=action,
                sample=np.asarray(u, dtype=float),
                log_prob=logp,
                value=v,
                next_value=v_next,
                reward_dense=dense,
                reward_verifiable=verifiable_reward(sim, reward_cfg.r_level, reward_cfg.r_max),
                similarity=sim,
                collided=hit,
                hint=tuple(float(h) for h in hint) if hint is not None else None,
            )
        )
        d = euclidean_distance(new_pose.position, goal_pos)
        min_dist = min(min_dist, d)
        pose, obs, hint, v = new_pose, next_obs, next_hint, v_next
        if d <= episode_cfg.success_radius:
            outcome = "success"
            break
        if hit:
            outcome = "collision"
            break
    return Episode(
        scenario_id=scenario.scenario_id,
        seed=int(rng_seed),
        assistance=assistance,
        records=tuple(records),
        outcome=outcome,
        final_distance=euclidean_distance(pose.position, goal_pos),
        min_distance=min_dist,
        initial_distance=scenario.initial_distance,
        start=scenario.start,
        final_observation=obs,
    )


# --------------------------------------------------------------------------
# line-delimited episode logs

def write_episode_log(ep: Episode, fh: IO[str], extra_header: dict | None = None) -> None:
    """One JSON header line, then one JSON line per step record.

    Floats go through ``repr`` inside ``json`` and round-trip exactly.
    """
    header = {"type": "episode", **(extra_header or {}), **ep.header()}
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    for r in ep.records:
        fh.write(json.dumps({"type": "step", **r.to_dict()}, sort_keys=True) + "\n")


def read_episode_logs(lines: Iterable[str]) -> list[Episode]:
    episodes: list[Episode] = []
    header: dict | None = None
    records: list[StepRecord] = []

    def flush():
        if header is None:
            return
        if len(records) != header["n_records"]:
            raise ValueError(f"episode {header['scenario_id']}: expected {header['n_records']} records, got {len(records)}")
        episodes.append(
            Episode(
                scenario_id=header["scenario_id"],
                seed=header["seed"],
                assistance=header["assistance"],
                records=tuple(records),
                outcome=header["outcome"],
                final_distance=header["final_distance"],
                min_distance=header["min_distance"],
                initial_distance=header["initial_distance"],
                start=Pose.from_list(header["start"]),
                final_observation=np.asarray(header["final_observation"], dtype=float),
            )
        )

    for line in lines:
        if not line.strip():
            continue
        d = json.loads(line)
        kind = d.pop("type")
        if kind == "episode":
            flush()
            header, records = d, []
        elif kind == "step":
            if header is None:
                raise ValueError("step record before any episode header")
            records.append(StepRecord.from_dict(d))
        else:
            raise ValueError(f"unknown record type {kind!r}")
    flush()
    return episodes


def expert_sequences(episodes: Sequence[Episode]) -> list[np.ndarray]:
    """Observation features along each episode, start state through final state."""
    return [np.stack([r.observation for r in ep.records] + [ep.final_observation]) for ep in episodes if ep.records]
