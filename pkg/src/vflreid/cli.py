"""Command-line entry point: ``vflreid {train,embed,eval,gradcheck,synth}``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical-check failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import checkpoint_run_config, load_checkpoint, save_checkpoint
from .config import Config, config_from_dict, load_config
from .data import (
    FeatureRecord,
    Item,
    VehicleImage,
    feature_file_image_shape,
    generate_synthetic,
    load_feature_file,
    records_to_images,
    split_query_gallery,
    write_feature_file,
)
from .errors import CompatibilityError, VflReidError
from .evaluation import METRICS, EmbeddingSet, EvalReport, evaluate
from .gradcheck import GradcheckReport, run_gradcheck
from .pipeline import ModelConfig, PipelineModel, embed_items, run_train_plan

logger = logging.getLogger("vflreid")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class Splits:
    train: list[Item]
    query: list[Item]
    gallery: list[Item]
    image_shape: tuple[int, ...] | None


def _config(path) -> Config:
    return load_config(path) if path else config_from_dict({})


def _as_items(records: Sequence[FeatureRecord], image_shape) -> list[Item]:
    if image_shape is None:
        return list(records)
    return records_to_images(records, image_shape)


def load_splits(cfg: Config) -> Splits:
    ds = cfg.dataset
    if ds.train is None:
        data = generate_synthetic(cfg.synthetic_spec)
        train, query, gallery = split_query_gallery(data.images, ds.train_fraction)
        return Splits(train, query, gallery, data.image_shape)
    shape = tuple(ds.image_shape) if ds.image_shape else feature_file_image_shape(ds.train)
    return Splits(
        _as_items(load_feature_file(ds.train), shape),
        _as_items(load_feature_file(ds.query), shape),
        _as_items(load_feature_file(ds.gallery), shape),
        shape,
    )


def build_model(cfg: Config, train: Sequence[Item]) -> PipelineModel:
    if not train:
        raise CompatibilityError("training set is empty")
    first = train[0]
    input_dim = int(first.pixels.size if isinstance(first, VehicleImage) else first.vector.size)
    class_ids = sorted({it.id for it in train})
    m = cfg.model
    model_cfg = ModelConfig(
        input_dim=input_dim,
        num_classes=max(2, len(class_ids)),
        backbone=m.backbone,
        backbone_hidden=m.backbone_hidden,
        feature_dim=input_dim if m.backbone == "passthrough" else m.feature_dim,
        vfl_dim=m.vfl_dim,
        lstm_units=m.lstm_units,
        time_steps=m.time_steps,
        alpha=float(m.alpha),
        kl_form=m.kl_form,
        sample_latent=m.sample_latent,
        regime=cfg.training.regime,
        l2_normalize_parts=cfg.eval.l2_normalize_parts,
    )
    return PipelineModel.create(model_cfg, seed=cfg.seed, class_ids=class_ids)


def cmd_train(cfg: Config, checkpoint: str | None = None, log_path: str | None = None, echo=print):
    """Train per the config; returns ``(model, logs)`` after writing checkpoint and log."""
    splits = load_splits(cfg)
    model = build_model(cfg, splits.train)
    plan = cfg.training.plan()
    model, logs = run_train_plan(
        model,
        plan,
        splits.train,
        cfg.seed,
        cfg.training.batch_size,
        cfg.training.augment,
        cfg.training.augment_config,
    )
    lines = [entry.format() for stage in logs.values() for entry in stage]
    log_path = Path(log_path or cfg.output.log)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        echo(line)
    run_config = cfg.to_dict()
    if splits.image_shape is not None:
        run_config["dataset"]["image_shape"] = list(splits.image_shape)
    save_checkpoint(model, checkpoint or cfg.output.checkpoint, run_config)
    return model, logs


def cmd_embed(checkpoint, input_path, out_path, seed: int | None = None) -> np.ndarray:
    model = load_checkpoint(checkpoint)
    run_cfg = checkpoint_run_config(checkpoint) or {}
    cfg = config_from_dict(run_cfg) if run_cfg else config_from_dict({})
    records = load_feature_file(input_path)
    shape = cfg.dataset.image_shape or feature_file_image_shape(input_path)
    for i, r in enumerate(records):
        if r.vector.size != model.config.input_dim:
            raise CompatibilityError(
                f"{input_path}: record {i} has width {r.vector.size}, model expects {model.config.input_dim}"
            )
    if shape is not None and int(np.prod(shape)) != model.config.input_dim:
        raise CompatibilityError(f"image shape {shape} does not match model input width {model.config.input_dim}")
    items = _as_items(records, shape)
    seed = cfg.seed if seed is None else seed
    vectors = embed_items(
        model, items, seed, augment_ops=cfg.training.augment, augment_config=cfg.training.augment_config
    )
    write_feature_file(out_path, [FeatureRecord(r.id, v, r.camera) for r, v in zip(records, vectors)])
    return vectors


def cmd_eval(query_path, gallery_path, metric: str = "cosine", top_k: Sequence[int] = ()) -> EvalReport:
    for p in (query_path, gallery_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"no such file: {p}")
    queries = EmbeddingSet.from_records(load_feature_file(query_path))
    gallery = EmbeddingSet.from_records(load_feature_file(gallery_path))
    if len(queries) and len(gallery) and queries.width != gallery.width:
        raise CompatibilityError(f"query width {queries.width} differs from gallery width {gallery.width}")
    return evaluate(queries, gallery, metric, top_k)


def cmd_gradcheck(seed: int = 0) -> GradcheckReport:
    return run_gradcheck(seed)


def cmd_synth(cfg: Config, out_dir) -> dict[str, Path]:
    data = generate_synthetic(cfg.synthetic_spec)
    train, query, gallery = split_query_gallery(data.images, cfg.dataset.train_fraction)
    out_dir = Path(out_dir)
    paths = {}
    for name, items in (("train", train), ("query", query), ("gallery", gallery)):
        paths[name] = out_dir / f"{name}.tsv"
        write_feature_file(paths[name], items, data.image_shape)
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vflreid", description="Variational + LSTM vehicle re-id pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", help="checkpoint output path (overrides config)")
    p.add_argument("--out", help="directory for model.vfl and train.log (overrides config)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("embed", help="embed a feature file with a trained checkpoint")
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="Top-k / mAP of query embeddings against a gallery")
    p.add_argument("query")
    p.add_argument("gallery")
    p.add_argument("--metric", choices=METRICS, default="cosine")
    p.add_argument("--top-k", type=int, action="append", default=[])

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="write a synthetic train/query/gallery split")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="synthetic data seed")
    return parser


def _with_seed(cfg: Config, seed: int | None) -> Config:
    if seed is not None:
        raw = cfg.to_dict()
        raw["seed"] = seed
        cfg = config_from_dict(raw)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            cfg = _with_seed(_config(args.config), args.seed)
            ckpt, log = args.checkpoint, None
            if args.out:
                ckpt = ckpt or os.path.join(args.out, "model.vfl")
                log = os.path.join(args.out, "train.log")
            cmd_train(cfg, ckpt, log)
        elif args.command == "embed":
            vectors = cmd_embed(args.checkpoint, args.input, args.out, args.seed)
            print(f"wrote {len(vectors)} embeddings of width {vectors.shape[1] if len(vectors) else 0} to {args.out}")
        elif args.command == "eval":
            report = cmd_eval(args.query, args.gallery, args.metric, args.top_k)
            print(report.table())
            print(report.record())
        elif args.command == "gradcheck":
            cfg = _config(args.config)
            report = cmd_gradcheck(cfg.seed if args.seed is None else args.seed)
            print("\n".join(report.lines()))
            if not report.passed:
                return EXIT_NUMERIC
        elif args.command == "synth":
            cfg = _config(args.config)
            if args.seed is not None:
                raw = cfg.to_dict()
                raw["dataset"]["synthetic"]["seed"] = args.seed
                cfg = config_from_dict(raw)
            for name, path in cmd_synth(cfg, args.out).items():
                print(f"{name}: {path}")
    except VflReidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
