"""JSON checkpoints: policy, reference policy and value weights plus the run config."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ConfigError, RunConfig, config_from_mapping, config_hash, _fmt
from .neural import OptState, PolicyParams, ValueParams

FORMAT = "aerialnav-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _arrays_to_json(arrays: dict[str, np.ndarray]) -> dict:
    return {k: np.asarray(a).tolist() for k, a in sorted(arrays.items())}


def _arrays_from_json(d: dict) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=float) for k, v in d.items()}


def checkpoint_document(state, cfg: RunConfig, master_seed: int) -> dict:
    flat = cfg.flat()
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "iteration": state.iteration,
        "master_seed": int(master_seed),
        "encoder_seed": cfg.encoder.encoder_seed,
        "feature_dim": cfg.encoder.feature_dim,
        "config": {k: _fmt(v) for k, v in flat.items()},
        "config_hash": config_hash(flat),
        "policy": {"sizes": list(state.policy.net.sizes), "arrays": _arrays_to_json(state.policy.arrays())},
        "reference_policy": {"sizes": list(state.ref_policy.net.sizes), "arrays": _arrays_to_json(state.ref_policy.arrays())},
    }
    if state.value is not None:
        doc["value"] = {"sizes": list(state.value.net.sizes), "arrays": _arrays_to_json(state.value.arrays())}
    return doc


def save_checkpoint(path: Path, state, cfg: RunConfig, master_seed: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(checkpoint_document(state, cfg, master_seed), sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def load_checkpoint(path: Path, expect: RunConfig | None = None):
    """Load a checkpoint into a TrainState and its RunConfig.

    With ``expect`` given, refuses to load when the encoder seed, feature
    dimension or config hash disagree with it.
    """
    from .rlopt import TrainState

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise CheckpointError(f"{path} is not a version-{VERSION} {FORMAT} file")
    try:
        cfg = config_from_mapping(doc["config"])
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint config invalid: {exc}") from exc
    if cfg.config_hash() != doc["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its embedded config")
    if cfg.encoder.encoder_seed != doc["encoder_seed"] or cfg.encoder.feature_dim != doc["feature_dim"]:
        raise CheckpointError("checkpoint encoder fields disagree with its config")
    if expect is not None:
        if (expect.encoder.encoder_seed, expect.encoder.feature_dim) != (cfg.encoder.encoder_seed, cfg.encoder.feature_dim):
            raise CheckpointError(
                f"encoder mismatch: checkpoint seed/dim {cfg.encoder.encoder_seed}/{cfg.encoder.feature_dim}, "
                f"config {expect.encoder.encoder_seed}/{expect.encoder.feature_dim}"
            )
        if expect.config_hash() != doc["config_hash"]:
            raise CheckpointError(f"config hash mismatch: checkpoint {doc['config_hash']}, config {expect.config_hash()}")
    policy = PolicyParams.from_arrays(doc["policy"]["sizes"], _arrays_from_json(doc["policy"]["arrays"]))
    ref = PolicyParams.from_arrays(doc["reference_policy"]["sizes"], _arrays_from_json(doc["reference_policy"]["arrays"]))
    value = None
    if "value" in doc:
        value = ValueParams.from_arrays(doc["value"]["sizes"], _arrays_from_json(doc["value"]["arrays"]))
    state = TrainState(policy, policy, ref, value, OptState.zeros_like(policy.arrays()), int(doc["iteration"]))
    return state, cfg, doc
