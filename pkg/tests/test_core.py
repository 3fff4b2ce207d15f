import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialnav.core import (
    Action,
    BoundsError,
    ConfigError,
    GoalSpec,
    Pose,
    RunConfig,
    Trajectory,
    apply_action,
    config_from_mapping,
    euclidean_distance,
    format_config,
    load_config,
    parse_config_text,
    path_length,
    wrap_angle,
)

angles = st.floats(-50.0, 50.0, allow_nan=False)
coords = st.floats(-1e3, 1e3, allow_nan=False)
steps = st.floats(-5.0, 5.0, allow_nan=False)
turns = st.floats(-math.pi / 4, math.pi / 4, allow_nan=False)


def test_zero_action_is_identity():
    assert apply_action(Pose(), Action()) == Pose()


def test_apply_action_wraps_theta():
    p = apply_action(Pose(x=1.0, theta=math.pi - 0.1), Action(dx=2.0, dtheta=0.2))
    assert p.x == 3.0
    assert p.theta == pytest.approx(-math.pi + 0.1, abs=1e-12)


def test_apply_action_single_axis():
    assert apply_action(Pose(z=5.0), Action(dz=-1.0)).z == 4.0


@pytest.mark.parametrize("action", [Action(dx=5.5), Action(dz=-6.0), Action(dpsi=1.0)])
def test_apply_action_rejects_out_of_bounds(action):
    with pytest.raises(BoundsError):
        apply_action(Pose(), action)


def test_action_bounds_are_configurable():
    assert apply_action(Pose(), Action(dx=8.0), max_step_len=10.0).x == 8.0


@given(angles)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angle_pi_maps_to_minus_pi():
    assert wrap_angle(math.pi) == -math.pi


@given(coords, coords, coords, angles, angles, angles, steps, steps, steps, turns, turns, turns)
def test_apply_action_angles_in_range_and_deterministic(x, y, z, t, f, s, dx, dy, dz, dt, df, ds):
    p = Pose(x, y, z, t, f, s)
    a = Action(dx, dy, dz, dt, df, ds)
    q = apply_action(p, a)
    for ang in (q.theta, q.phi, q.psi):
        assert -math.pi <= ang < math.pi
    assert q.as_list() == apply_action(p, a).as_list()


def test_pose_rejects_non_finite():
    with pytest.raises(ValueError):
        Pose(x=float("nan"))


@pytest.mark.parametrize(
    "a,b,d",
    [((0, 0, 0), (0, 0, 0), 0.0), ((0, 0, 0), (3, 4, 0), 5.0), ((1, 1, 1), (2, 2, 2), math.sqrt(3))],
)
def test_euclidean_distance(a, b, d):
    assert euclidean_distance(a, b) == pytest.approx(d, abs=1e-15)


def test_euclidean_distance_requires_three_vectors():
    with pytest.raises(ValueError):
        euclidean_distance((0, 0), (0, 0, 0))


def test_path_length_examples():
    assert path_length(Trajectory((Pose(),))) == 0.0
    straight = Trajectory((Pose.at((0, 0, 0)), Pose.at((5, 0, 0)), Pose.at((10, 0, 0))))
    assert path_length(straight) == 10.0
    corner = Trajectory((Pose.at((0, 0, 0)), Pose.at((3, 0, 0)), Pose.at((3, 4, 0))))
    assert path_length(corner) == 7.0


@settings(max_examples=50)
@given(st.lists(st.tuples(coords, coords, coords), min_size=1, max_size=8))
def test_path_length_triangle_inequality(points):
    t = Trajectory(tuple(Pose.at(p) for p in points))
    assert path_length(t) >= euclidean_distance(points[0], points[-1]) - 1e-9


def test_goal_spec_features_are_derived_and_checked():
    g = GoalSpec((10.0, 20.0, 30.0), 5)
    assert len(g.description_features) == 8
    assert GoalSpec((10.0, 20.0, 30.0), 5) == g
    with pytest.raises(ValueError):
        GoalSpec((10.0, 20.0, 30.0), 5, tuple(np.zeros(8)))


def test_config_text_round_trip(tmp_path):
    cfg = RunConfig().replace(r_level=math.inf, max_steps=150, baseline=True)
    text = format_config(cfg)
    assert "r_level=inf" in text
    assert parse_config_text(text) == cfg
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nmax_steps=150\nr_level=inf\nbaseline=true\n", encoding="utf-8")
    assert load_config(path) == cfg


def test_config_unknown_key_is_error():
    with pytest.raises(ConfigError):
        parse_config_text("no_such_key=1\n")


def test_config_duplicate_key_is_error():
    with pytest.raises(ConfigError):
        parse_config_text("max_steps=1\nmax_steps=2\n")


@pytest.mark.parametrize("kv", [{"gamma": 0.0}, {"r_level": -1.0}, {"epsilon": 1.5}, {"train_assistance": "L4"}])
def test_config_validation(kv):
    with pytest.raises(ConfigError):
        config_from_mapping(kv)


def test_config_hash_tracks_values():
    a = RunConfig()
    assert a.config_hash() == RunConfig().config_hash()
    assert a.config_hash() != a.replace(r_level=3.0).config_hash()


def test_defaults():
    cfg = RunConfig()
    assert cfg.episode.max_steps == 200
    assert cfg.episode.success_radius == 20.0
    assert cfg.reward.r_max == 1e6
    assert cfg.optimizer.epsilon == 0.2
    assert cfg.optimizer.learning_rate == 1e-4
    assert cfg.world.max_step_len == 5.0
    assert cfg.world.max_turn == pytest.approx(math.pi / 4)
    assert cfg.reward.shaping_mode == "potential"
