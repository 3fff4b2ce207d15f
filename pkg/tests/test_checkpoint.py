import json

import numpy as np
import pytest

from aerialnav.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from aerialnav.neural import ValueParams
from aerialnav.rlopt import init_train_state


@pytest.fixture
def saved(smoke_cfg, tmp_path):
    value = ValueParams.init(64, 16, np.random.default_rng(0))
    state = init_train_state(smoke_cfg, 3, value)
    return save_checkpoint(tmp_path / "ckpt_0.json", state, smoke_cfg, 3), state


def test_round_trip_is_bit_exact(saved, smoke_cfg, tmp_path):
    path, state = saved
    loaded, cfg, doc = load_checkpoint(path, expect=smoke_cfg)
    assert cfg == smoke_cfg
    assert doc["encoder_seed"] == 42 and doc["feature_dim"] == 64
    for k, a in state.policy.arrays().items():
        assert a.tobytes() == loaded.policy.arrays()[k].tobytes()
    for k, a in state.value.arrays().items():
        assert a.tobytes() == loaded.value.arrays()[k].tobytes()
    again = save_checkpoint(tmp_path / "again.json", loaded, cfg, 3)
    assert again.read_bytes() == path.read_bytes()


def test_refuses_config_mismatch(saved, smoke_cfg):
    path, _ = saved
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(path, expect=smoke_cfg.replace(r_level=3.0))
    with pytest.raises(CheckpointError, match="encoder"):
        load_checkpoint(path, expect=smoke_cfg.replace(encoder_seed=1))


def test_refuses_tampered_file(saved):
    path, _ = saved
    doc = json.loads(path.read_text())
    doc["config"]["beta"] = "0.5"
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_refuses_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")
