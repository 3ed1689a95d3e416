import json
import struct

import numpy as np
import pytest

from vflreid.checkpoint import (
    checkpoint_run_config,
    encode,
    load_checkpoint,
    restore_parameters,
    save_checkpoint,
)
from vflreid.config import config_from_dict, load_config
from vflreid.errors import (
    CheckpointVersionError,
    CompatibilityError,
    ConfigError,
    CorruptCheckpointError,
)
from vflreid.gradcheck import tiny_model


def test_roundtrip_is_bitwise(tmp_path, rng):
    model = tiny_model(seed=2)
    for p in model.named_parameters().values():
        p.data[...] = rng.normal(size=p.shape) * 1e-3
    model.trained["backbone"] = True
    path = tmp_path / "m.vfl"
    save_checkpoint(model, path, {"seed": 7})
    back = load_checkpoint(path)
    for k, v in model.named_parameters().items():
        assert np.array_equal(back.named_parameters()[k].data, v.data), k
    assert back.trained == model.trained
    assert back.class_ids == model.class_ids
    assert back.config == model.config
    assert checkpoint_run_config(path) == {"seed": 7}


def test_truncated_is_corrupt(tmp_path):
    path = tmp_path / "m.vfl"
    save_checkpoint(tiny_model(), path)
    data = path.read_bytes()
    for cut in (10, len(data) // 2, len(data) - 1):
        path.write_bytes(data[:cut])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)


def test_flipped_byte_is_corrupt(tmp_path):
    path = tmp_path / "m.vfl"
    data = bytearray(encode(tiny_model()))
    data[200] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError, match="checksum"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "m.vfl"
    path.write_bytes(b"NOPE" + encode(tiny_model())[4:])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    import hashlib

    body = bytearray(encode(tiny_model())[:-32])
    body[4:8] = struct.pack("<I", 99)
    path = tmp_path / "m.vfl"
    path.write_bytes(bytes(body) + hashlib.sha256(bytes(body)).digest())
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_incompatible_model(tmp_path):
    path = tmp_path / "m.vfl"
    save_checkpoint(tiny_model(input_dim=8), path)
    with pytest.raises(CompatibilityError):
        load_checkpoint(path, tiny_model(input_dim=9))
    with pytest.raises(CompatibilityError):
        restore_parameters(tiny_model(), {"x": np.zeros(1)})


def test_empty_config_has_original_defaults():
    cfg = config_from_dict({})
    assert cfg.model.alpha == 0.1 and cfg.model.time_steps == 3
    assert cfg.model.vfl_dim == 256 and cfg.model.lstm_units == 256 and cfg.model.feature_dim == 1024
    plan = cfg.training.plan()
    assert [s.epochs for s in plan.stages] == [70, 50, 70]
    assert [s.schedule.decay_every for s in plan.stages] == [30, 20, 30]
    assert all(s.schedule.initial_lr == 1e-4 for s in plan.stages)
    assert cfg.training.augment == ["crop", "rotate", "brightness"]


def test_config_lists_every_error():
    raw = {
        "seed": -1,
        "model": {"alpha": -0.5, "kl_form": "weird", "bogus": 1},
        "training": {"regime": "mystery", "stages": {"vfl": {"epochs": 0}}},
        "eval": {"metric": "manhattan"},
    }
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    text = str(info.value)
    for field in ("seed", "model.alpha", "model.kl_form", "model.bogus", "training.regime",
                  "training.stages.vfl.epochs", "eval.metric"):
        assert field in text, field
    assert len(info.value.errors) >= 7


def test_load_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"lstm_units": 64}, "training": {"regime": "joint_vfl"}}))
    cfg = load_config(p)
    assert cfg.model.lstm_units == 64 and cfg.training.plan().regime == "joint_vfl"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_roundtrip():
    cfg = config_from_dict({"seed": 3, "dataset": {"synthetic": {"num_identities": 4}}})
    again = config_from_dict(cfg.to_dict())
    assert again == cfg
    assert again.synthetic_spec.num_identities == 4
