import json

import numpy as np
import pytest

import vflreid.tensor as tn
from vflreid.checkpoint import load_checkpoint
from vflreid.cli import main
from vflreid.data import load_feature_file

DESK = {
    "dataset": {"synthetic": {"num_identities": 4, "images_per_identity": 9}},
    "model": {"backbone_hidden": 32, "feature_dim": 16, "vfl_dim": 8, "lstm_units": 8},
    "training": {
        "batch_size": 4,
        "stages": {
            "backbone": {"epochs": 3, "initial_lr": 0.003},
            "vfl": {"epochs": 3, "initial_lr": 0.003},
            "lstm": {"epochs": 3, "initial_lr": 0.003},
            "joint": {"epochs": 3, "initial_lr": 0.003},
        },
    },
}


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(DESK))
    return tmp_path, cfg


def _pipeline(tmp, cfg, tag):
    out = tmp / tag
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    ck = str(out / "model.vfl")
    assert main(["embed", str(out / "query.tsv"), "--checkpoint", ck, "--out", str(out / "q.emb")]) == 0
    assert main(["embed", str(out / "gallery.tsv"), "--checkpoint", ck, "--out", str(out / "g.emb"), "--seed", "1"]) == 0
    return out


def test_full_cli_pipeline(workdir, capsys):
    tmp, cfg = workdir
    out = _pipeline(tmp, cfg, "a")
    log = (out / "train.log").read_text().splitlines()
    assert len(log) == 9
    assert log[0].startswith("epoch=0 stage=backbone lr=")
    assert all(k in log[-1] for k in ("total=", "id=", "kl="))
    capsys.readouterr()
    assert main(["eval", str(out / "q.emb"), str(out / "g.emb"), "--top-k", "10"]) == 0
    text = capsys.readouterr().out
    assert "Top-1" in text and "mAP" in text
    record = text.strip().splitlines()[-1]
    assert record.startswith("top1=") and "top10=" in record and "n_query=12" in record
    q = load_feature_file(out / "q.emb")
    assert len(q) == 12 and q[0].vector.size == 16


def test_embed_is_deterministic(workdir):
    tmp, cfg = workdir
    out = _pipeline(tmp, cfg, "a")
    ck = str(out / "model.vfl")
    assert main(["embed", str(out / "query.tsv"), "--checkpoint", ck, "--out", str(out / "q2.emb")]) == 0
    assert (out / "q.emb").read_bytes() == (out / "q2.emb").read_bytes()


def test_embed_five_records(workdir):
    tmp, cfg = workdir
    out = _pipeline(tmp, cfg, "a")
    lines = (out / "query.tsv").read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")][:5]
    (out / "five.tsv").write_text("\n".join(header + body) + "\n")
    assert main(["embed", str(out / "five.tsv"), "--checkpoint", str(out / "model.vfl"), "--out", str(out / "five.emb")]) == 0
    assert len((out / "five.emb").read_text().splitlines()) == 5


def test_embed_width_mismatch(workdir):
    tmp, cfg = workdir
    out = _pipeline(tmp, cfg, "a")
    (out / "narrow.tsv").write_text("x\t-\t0.1,0.2,0.3\n")
    assert main(["embed", str(out / "narrow.tsv"), "--checkpoint", str(out / "model.vfl"), "--out", str(out / "n.emb")]) == 1


def test_joint_vfl_checkpoint(workdir):
    tmp, _ = workdir
    raw = json.loads(json.dumps(DESK))
    raw["training"]["regime"] = "joint_vfl"
    cfg = tmp / "joint.json"
    cfg.write_text(json.dumps(raw))
    out = _pipeline(tmp, cfg, "j")
    model = load_checkpoint(out / "model.vfl")
    assert model.trained == {"backbone": True, "vfl": True, "lstm": False}
    assert load_feature_file(out / "q.emb")[0].vector.size == 8


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "gradcheck passed" in out and "lstm.W_i" in out


def test_gradcheck_catches_wrong_backward(monkeypatch, capsys):
    real_tanh = tn.tanh

    def broken_tanh(x):
        out = real_tanh(x)
        # same forward value, but the derivative is 1 instead of 1 - tanh^2
        return tn.add(tn.constant_view(out), tn.sub(x, tn.constant_view(x)))

    monkeypatch.setattr(tn, "tanh", broken_tanh)
    assert main(["gradcheck"]) == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "gradcheck FAILED" in out


def test_exit_codes(workdir, capsys):
    tmp, _ = workdir
    assert main(["eval", str(tmp / "missing.tsv"), str(tmp / "missing2.tsv")]) == 2
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"model": {"alpha": -1, "vfl_dim": 0}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp / "x")]) == 1
    err = capsys.readouterr().err
    assert "model.alpha" in err and "model.vfl_dim" in err
    assert main(["embed", str(tmp / "nothing.tsv"), "--checkpoint", str(tmp / "nothing.vfl"), "--out", str(tmp / "o")]) == 2


def test_synth_seed_changes_data(workdir):
    tmp, cfg = workdir
    main(["synth", "--config", str(cfg), "--out", str(tmp / "s0")])
    main(["synth", "--config", str(cfg), "--out", str(tmp / "s1"), "--seed", "1"])
    a = load_feature_file(tmp / "s0" / "train.tsv")
    b = load_feature_file(tmp / "s1" / "train.tsv")
    assert not np.array_equal(a[0].vector, b[0].vector)
