import numpy as np
import pytest

from aerialnav.core import GoalSpec, Pose, RunConfig, WorldConfig
from aerialnav.encoder import EncoderParams
from aerialnav.planner import oracle_shortest_path
from aerialnav.simworld import Scenario


def make_scenario(start, goal, obstacles=(), difficulty="easy", token_seed=3, world=None, scenario_id="hand"):
    world = world or WorldConfig()
    start_pose = Pose.at(start)
    path = oracle_shortest_path(
        start_pose,
        goal,
        list(obstacles),
        resolution=world.grid_resolution,
        drone_radius=world.drone_radius,
        z_min=world.z_min,
        z_max=world.z_max,
    )
    return Scenario(scenario_id, 0, difficulty, start_pose, GoalSpec(tuple(goal), token_seed), tuple(obstacles), path)


@pytest.fixture
def cfg():
    return RunConfig()


@pytest.fixture
def encoder(cfg):
    return EncoderParams.from_config(cfg.encoder)


@pytest.fixture
def empty_scenario():
    return make_scenario((0.0, 0.0, 50.0), (100.0, 0.0, 50.0))


@pytest.fixture
def smoke_cfg():
    return RunConfig().replace(
        iterations=3,
        episodes_per_iteration=4,
        expert_episodes=12,
        value_epochs=3,
        max_steps=40,
        hidden_size=16,
        checkpoint_every=2,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
