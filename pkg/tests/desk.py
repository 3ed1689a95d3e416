"""Desk-scale training recipe shared by the pipeline and acceptance tests.

Ten identities, three viewpoints, six images per viewpoint; 30 epochs per stage
at lr 3e-3 with batch 4 and reduced layer widths, which trains in seconds.
"""

import numpy as np

from vflreid.data import SyntheticSpec, generate_synthetic, split_query_gallery
from vflreid.evaluation import EmbeddingSet, evaluate
from vflreid.optim import LrSchedule
from vflreid.pipeline import ModelConfig, PipelineModel, TrainPlan, embed_items, run_train_plan

EPOCHS = 30
LR = 3e-3
BATCH = 4


def desk_data(seed=0):
    data = generate_synthetic(SyntheticSpec(10, 18, 3, 0.03, seed))
    return split_query_gallery(data.images)


def desk_model(seed=0, units=32, alpha=0.1, **kw):
    cfg = ModelConfig(
        input_dim=256, num_classes=10, backbone_hidden=128, feature_dim=64, vfl_dim=32,
        lstm_units=units, alpha=alpha, **kw,
    )
    return PipelineModel.create(cfg, seed=seed)


def desk_plan(regime="separate", epochs=EPOCHS):
    sched = LrSchedule(LR, 0.1, 30)
    if regime == "joint_vfl":
        return TrainPlan.joint_vfl(epochs, sched)
    return TrainPlan.separate((epochs,) * 3, (sched,) * 3)


def desk_train(seed=0, units=32, alpha=0.1, regime="separate", epochs=EPOCHS):
    train, query, gallery = desk_data(seed)
    model = desk_model(seed, units, alpha)
    model, logs = run_train_plan(model, desk_plan(regime, epochs), train, seed, BATCH)
    return model, logs, (train, query, gallery)


def desk_eval(model, query, gallery, seed=0, parts="concat", metric="cosine"):
    q = EmbeddingSet([x.id for x in query], [x.camera for x in query], embed_items(model, query, seed, parts))
    g = EmbeddingSet([x.id for x in gallery], [x.camera for x in gallery], embed_items(model, gallery, seed + 1, parts))
    return evaluate(q, g, metric)


def mean_abs_mu(model, items):
    from vflreid.pipeline import forward_embed

    inputs = np.stack([it.pixels.reshape(-1) for it in items])[:, None, :]
    mu, _ = forward_embed(model.inference_view(), inputs)
    return float(np.abs(mu.data).mean())
