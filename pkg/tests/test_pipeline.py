import numpy as np
import pytest

from conftest import central_difference, max_rel_err
from desk import desk_data, desk_model, desk_plan, desk_train, BATCH
from vflreid import tensor as tn
from vflreid.data import SequenceBatch, VehicleImage, build_query_sequence, item_array
from vflreid.errors import ConfigError, DimensionError
from vflreid.gradcheck import tiny_model
from vflreid.losses import one_hot
from vflreid.optim import LrSchedule
from vflreid.pipeline import (
    ModelConfig,
    PipelineModel,
    Stage,
    TrainPlan,
    embed_items,
    embed_sequences,
    end_to_end_loss,
    forward_embed,
    infer_feature,
    run_train_plan,
    stage_loss,
    stage_parameters,
    train_stage,
)


def test_forward_shapes_at_full_width(rng):
    cfg = ModelConfig(input_dim=1024, num_classes=5, backbone="passthrough", feature_dim=1024)
    model = PipelineModel.create(cfg)
    mu, hidden = forward_embed(model, rng.normal(size=(2, 3, 1024)))
    assert mu.shape == (2, 3, 256)
    assert hidden.shape == (2, 3, 256)


def test_zero_vfl_weights_give_zero_mu(rng):
    model = tiny_model()
    model.mu_head.W.data[:] = 0
    model.mu_head.b.data[:] = 0
    mu, _ = forward_embed(model, rng.uniform(size=(2, 3, 8)))
    assert np.all(mu.data == 0)


def test_identical_steps_identical_mu(rng):
    model = tiny_model()
    x = rng.uniform(size=(1, 1, 8))
    mu, _ = forward_embed(model, np.repeat(x, 3, axis=1))
    assert np.array_equal(mu.data[0, 0], mu.data[0, 1]) and np.array_equal(mu.data[0, 1], mu.data[0, 2])


def test_input_width_checked(rng):
    with pytest.raises(DimensionError):
        forward_embed(tiny_model(), rng.uniform(size=(1, 3, 7)))


def test_frozen_components_unchanged_bitwise():
    train, _, _ = desk_data(0)
    model = desk_model(0)
    before = {k: v.data.copy() for k, v in model.named_parameters().items()}
    stage = Stage("lstm", ("lstm",), ("backbone", "vfl"), 2, LrSchedule(3e-3))
    train_stage(model, stage, train, 0, BATCH, stage_index=2)
    after = model.named_parameters()
    for k, v in before.items():
        if k.startswith(("backbone", "mu_head", "sigma_head", "vfl_classifier")):
            assert np.array_equal(after[k].data, v), k
        if k.startswith("lstm."):
            assert not np.array_equal(after[k].data, v), k


def test_overfit_single_identity(rng):
    img = [VehicleImage("solo", rng.uniform(size=(8, 8, 1))) for _ in range(3)]
    model = tiny_model(input_dim=64, num_classes=2)
    model.class_ids = ["solo", "unused"]
    model.config.alpha = 0.0
    stage = Stage("vfl", ("vfl",), (), 200, LrSchedule(1e-2))
    logs = train_stage(model, stage, img, 0, batch_size=1)
    assert logs[-1].id < 0.01


def test_vfl_stage_reports_kl():
    _, logs, _ = desk_train(0, epochs=2)
    assert all(e.kl > 0 for e in logs["vfl"])
    assert all(e.kl == 0 for e in logs["lstm"])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_decreases(seed):
    _, logs, _ = desk_train(seed, epochs=10)
    assert set(logs) == {"backbone", "vfl", "lstm"}
    for stage in logs.values():
        assert len(stage) == 10
        assert stage[9].total < stage[0].total


def test_joint_vfl_leaves_lstm_untouched():
    train, _, _ = desk_data(0)
    model = desk_model(0)
    lstm_before = {k: v.data.copy() for k, v in model.component_parameters("lstm").items()}
    model, logs = run_train_plan(model, desk_plan("joint_vfl", 3), train, 0, BATCH)
    assert list(logs) == ["backbone+vfl"]
    for k, v in model.component_parameters("lstm").items():
        assert np.array_equal(v.data, lstm_before[k])
    assert model.trained == {"backbone": True, "vfl": True, "lstm": False}
    feats = embed_items(model, train[:4], 0)
    assert feats.shape == (4, 32)


def test_training_is_deterministic():
    a, la, _ = desk_train(3, epochs=2)
    b, lb, _ = desk_train(3, epochs=2)
    for k, v in a.named_parameters().items():
        assert np.array_equal(v.data, b.named_parameters()[k].data)
    assert [e.format() for e in la["lstm"]] == [e.format() for e in lb["lstm"]]


def test_inference_feature_layout():
    model, _, (train, query, _) = desk_train(0, epochs=1)
    rng = np.random.default_rng(0)
    feat = infer_feature(model, query[0], rng)
    assert feat.shape == (32 + 32,)
    # the mu part comes from the unaugmented original
    mu, _ = forward_embed(model.inference_view(), query[0].pixels.reshape(1, 1, -1))
    np.testing.assert_allclose(feat[32:], mu.data[0, 0], rtol=1e-12, atol=1e-15)
    # the lstm part is h_T of the query sequence built from the same rng draw
    seq = build_query_sequence(query[0], 3, np.random.default_rng(0))
    inputs = np.stack([item_array(x) for x in seq])[None]
    np.testing.assert_allclose(feat[:32], embed_sequences(model, inputs, "lstm")[0], rtol=1e-12, atol=1e-15)


def test_untrained_inference_warns(rng):
    model = desk_model(0)
    train, _, _ = desk_data(0)
    with pytest.warns(UserWarning):
        infer_feature(model, train[0], rng)


def test_embed_items_independent_of_chunking():
    model, _, (_, query, _) = desk_train(0, epochs=1)
    a = embed_items(model, query, 5)
    b = embed_items(model, query, 5, chunk=7)
    assert np.array_equal(a, b)


def test_end_to_end_gradients_match_finite_differences(rng):
    model = tiny_model(seed=4)
    batch = SequenceBatch(rng.uniform(size=(2, 3, 8)), one_hot([0, 1], 2))
    params = model.named_parameters()
    for p in params.values():
        p.grad = None
    tn.backward(end_to_end_loss(model, batch))
    arrays = [p.data for p in params.values()]
    numeric = central_difference(lambda: end_to_end_loss(model, batch).item(), arrays)
    for (name, p), g in zip(params.items(), numeric):
        assert max_rel_err(p.grad, g) <= 1e-4, name


def test_joint_stage_skips_unused_head():
    names = set(stage_parameters(tiny_model(), ("backbone", "vfl")))
    assert "vfl_classifier.W" in names and "backbone.0.W" in names
    assert not any(n.startswith("backbone_classifier") for n in names)


def test_stage_loss_rejects_empty_stage(rng):
    batch = SequenceBatch(rng.uniform(size=(1, 3, 8)), one_hot([0], 2))
    with pytest.raises(ConfigError):
        stage_loss(tiny_model(), [], batch)


def test_plan_validation():
    with pytest.raises(ConfigError):
        TrainPlan("separate", (Stage("lstm", ("lstm",), (), 1, LrSchedule()),)).validate()
    with pytest.raises(ConfigError):
        TrainPlan.separate((0, 1, 1))


def test_too_many_identities():
    with pytest.raises(ConfigError):
        PipelineModel.create(ModelConfig(input_dim=4, num_classes=2), class_ids=["a", "b", "c"])
