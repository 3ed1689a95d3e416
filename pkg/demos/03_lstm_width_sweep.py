"""
How much does the sequence encoder width matter?
================================================

Train the full three-stage pipeline with LSTM widths 16, 64 and 256 and score
the LSTM part of the descriptor alone on a cross-camera split.
"""

import time

from vflreid.data import SyntheticSpec, generate_synthetic, split_query_gallery
from vflreid.evaluation import EmbeddingSet, evaluate
from vflreid.optim import LrSchedule
from vflreid.pipeline import ModelConfig, PipelineModel, TrainPlan, embed_items, run_train_plan

data = generate_synthetic(SyntheticSpec(num_identities=10, images_per_identity=18, seed=0))
train, query, gallery = split_query_gallery(data.images)
plan = TrainPlan.separate((30, 30, 30), [LrSchedule(3e-3, 0.1, 30)] * 3)


def as_set(items, vectors):
    return EmbeddingSet([it.id for it in items], [it.camera for it in items], vectors)


print(f"{'units':>5} {'top1':>6} {'top5':>6} {'mAP':>6} {'secs':>5}")
for units in (16, 64, 256):
    start = time.perf_counter()
    cfg = ModelConfig(input_dim=256, num_classes=10, backbone_hidden=128, feature_dim=64,
                      vfl_dim=32, lstm_units=units)
    model, _ = run_train_plan(PipelineModel.create(cfg, seed=0), plan, train, seed=0, batch_size=4)
    q = as_set(query, embed_items(model, query, seed=0, parts="lstm"))
    g = as_set(gallery, embed_items(model, gallery, seed=1, parts="lstm"))
    r = evaluate(q, g)
    print(f"{units:>5} {r.top1:>6.3f} {r.top5:>6.3f} {r.map:>6.3f} {time.perf_counter() - start:>5.1f}")
