"""Run configuration: a JSON document whose every field has a default.

An empty ``{}`` file therefore runs the pipeline with the original
hyper-parameters (alpha 0.1, T = 3, Adam at 1e-4 decayed by 0.1 every
30 / 20 / 30 epochs for 70 / 50 / 70 epochs) on the default synthetic set.

Schema (all keys optional)::

    {
      "seed": 0,
      "dataset": {
        "synthetic": {"num_identities": 10, "images_per_identity": 18,
                      "viewpoint_count": 3, "noise_scale": 0.03, "seed": 0,
                      "image_size": 16, "depth": 1},
        "train": null, "query": null, "gallery": null,   # feature-file paths
        "image_shape": null,                              # e.g. [16, 16, 1]
        "train_fraction": 0.6667
      },
      "model": {"backbone": "mlp_stub", "backbone_hidden": 256,
                "feature_dim": 1024, "vfl_dim": 256, "lstm_units": 256,
                "time_steps": 3, "alpha": 0.1, "kl_form": "variance",
                "sample_latent": false},
      "training": {
        "regime": "separate", "batch_size": 16,
        "augment": ["crop", "rotate", "brightness"],
        "crop_area": [0.8, 1.0], "max_rotation": 15.0, "brightness": [0.8, 1.2],
        "stages": {
          "backbone": {"epochs": 70, "initial_lr": 1e-4, "decay_factor": 0.1, "decay_every": 30},
          "vfl":      {"epochs": 50, "initial_lr": 1e-4, "decay_factor": 0.1, "decay_every": 20},
          "lstm":     {"epochs": 70, "initial_lr": 1e-4, "decay_factor": 0.1, "decay_every": 30},
          "joint":    {"epochs": 70, "initial_lr": 1e-4, "decay_factor": 0.1, "decay_every": 30}
        }
      },
      "eval": {"metric": "cosine", "l2_normalize_parts": false},
      "output": {"checkpoint": "run/model.vfl", "log": "run/train.log"}
    }
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import AUGMENT_OPS, AugmentConfig, SyntheticSpec
from .errors import ConfigError
from .evaluation import METRICS
from .losses import KL_FORMS
from .optim import LrSchedule
from .pipeline import BACKBONE_KINDS, REGIMES, TrainPlan


@dataclass
class StageConfig:
    epochs: int
    initial_lr: float = 1e-4
    decay_factor: float = 0.1
    decay_every: int = 30

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.initial_lr, self.decay_factor, self.decay_every)


def _default_stages() -> dict[str, StageConfig]:
    return {
        "backbone": StageConfig(70, decay_every=30),
        "vfl": StageConfig(50, decay_every=20),
        "lstm": StageConfig(70, decay_every=30),
        "joint": StageConfig(70, decay_every=30),
    }


@dataclass
class DatasetConfig:
    synthetic: dict = field(default_factory=lambda: asdict(SyntheticSpec()))
    train: str | None = None
    query: str | None = None
    gallery: str | None = None
    image_shape: list[int] | None = None
    train_fraction: float = 2 / 3


@dataclass
class ModelSection:
    backbone: str = "mlp_stub"
    backbone_hidden: int = 256
    feature_dim: int = 1024
    vfl_dim: int = 256
    lstm_units: int = 256
    time_steps: int = 3
    alpha: float = 0.1
    kl_form: str = "variance"
    sample_latent: bool = False


@dataclass
class TrainingSection:
    regime: str = "separate"
    batch_size: int = 16
    augment: list[str] = field(default_factory=lambda: list(AUGMENT_OPS))
    crop_area: list[float] = field(default_factory=lambda: [0.8, 1.0])
    max_rotation: float = 15.0
    brightness: list[float] = field(default_factory=lambda: [0.8, 1.2])
    stages: dict[str, StageConfig] = field(default_factory=_default_stages)

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(tuple(self.crop_area), float(self.max_rotation), tuple(self.brightness))

    def plan(self) -> TrainPlan:
        s = self.stages
        if self.regime == "joint_vfl":
            return TrainPlan.joint_vfl(s["joint"].epochs, s["joint"].schedule)
        return TrainPlan.separate(
            (s["backbone"].epochs, s["vfl"].epochs, s["lstm"].epochs),
            (s["backbone"].schedule, s["vfl"].schedule, s["lstm"].schedule),
        )


@dataclass
class EvalSection:
    metric: str = "cosine"
    l2_normalize_parts: bool = False


@dataclass
class OutputSection:
    checkpoint: str = "run/model.vfl"
    log: str = "run/train.log"


@dataclass
class Config:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**self.dataset.synthetic)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _fill(section, values: dict, prefix: str, errors: list[str]) -> None:
    if not isinstance(values, dict):
        errors.append(f"{prefix} must be an object")
        return
    known = {f.name for f in fields(section)}
    for key, value in values.items():
        if key not in known:
            errors.append(f"{prefix}.{key} is not a recognised field")
        else:
            setattr(section, key, value)


def validate(cfg: Config) -> list[str]:
    errors: list[str] = []

    def need(cond: bool, msg: str):
        if not cond:
            errors.append(msg)

    need(_is_int(cfg.seed) and cfg.seed >= 0, f"seed must be a non-negative integer, got {cfg.seed!r}")

    ds = cfg.dataset
    if ds.train is None:
        try:
            SyntheticSpec(**ds.synthetic)
        except (TypeError, ValueError) as exc:
            errors.append(f"dataset.synthetic: {exc}")
    for name in ("train", "query", "gallery"):
        v = getattr(ds, name)
        need(v is None or isinstance(v, str), f"dataset.{name} must be a path string or null")
    if ds.train is not None:
        need(ds.query is not None and ds.gallery is not None, "dataset.query and dataset.gallery are required with dataset.train")
    if ds.image_shape is not None:
        need(
            isinstance(ds.image_shape, list)
            and len(ds.image_shape) == 3
            and all(_is_int(s) for s in ds.image_shape)
            and ds.image_shape[0] >= 8
            and ds.image_shape[1] >= 8
            and ds.image_shape[2] in (1, 3),
            f"dataset.image_shape must be [W>=8, H>=8, D in {{1,3}}], got {ds.image_shape!r}",
        )
    need(_is_num(ds.train_fraction) and 0 < ds.train_fraction < 1, "dataset.train_fraction must be in (0, 1)")

    m = cfg.model
    for name in ("backbone_hidden", "feature_dim", "vfl_dim", "lstm_units", "time_steps"):
        v = getattr(m, name)
        need(_is_int(v) and v >= 1, f"model.{name} must be a positive integer, got {v!r}")
    need(m.backbone in BACKBONE_KINDS, f"model.backbone must be one of {BACKBONE_KINDS}, got {m.backbone!r}")
    need(_is_num(m.alpha) and m.alpha >= 0, f"model.alpha must be >= 0, got {m.alpha!r}")
    need(m.kl_form in KL_FORMS, f"model.kl_form must be one of {KL_FORMS}, got {m.kl_form!r}")
    need(isinstance(m.sample_latent, bool), "model.sample_latent must be true or false")

    t = cfg.training
    need(t.regime in REGIMES, f"training.regime must be one of {REGIMES}, got {t.regime!r}")
    need(_is_int(t.batch_size) and t.batch_size >= 1, f"training.batch_size must be a positive integer, got {t.batch_size!r}")
    need(
        isinstance(t.augment, list) and set(t.augment) <= set(AUGMENT_OPS),
        f"training.augment must be a subset of {list(AUGMENT_OPS)}, got {t.augment!r}",
    )
    for name, lo, hi in (("crop_area", 0.0, 1.0), ("brightness", 0.0, None)):
        v = getattr(t, name)
        ok = isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v) and v[0] <= v[1] and v[0] > lo
        if ok and hi is not None:
            ok = v[1] <= hi
        need(ok, f"training.{name} must be an increasing [low, high] pair, got {v!r}")
    need(_is_num(t.max_rotation) and t.max_rotation >= 0, "training.max_rotation must be >= 0")
    for stage, sc in t.stages.items():
        p = f"training.stages.{stage}"
        need(_is_int(sc.epochs) and sc.epochs >= 1, f"{p}.epochs must be a positive integer, got {sc.epochs!r}")
        need(_is_num(sc.initial_lr) and sc.initial_lr > 0, f"{p}.initial_lr must be positive")
        need(_is_num(sc.decay_factor) and 0 < sc.decay_factor <= 1, f"{p}.decay_factor must be in (0, 1]")
        need(_is_int(sc.decay_every) and sc.decay_every >= 1, f"{p}.decay_every must be a positive integer")

    need(cfg.eval.metric in METRICS, f"eval.metric must be one of {METRICS}, got {cfg.eval.metric!r}")
    need(isinstance(cfg.eval.l2_normalize_parts, bool), "eval.l2_normalize_parts must be true or false")
    need(isinstance(cfg.output.checkpoint, str) and cfg.output.checkpoint, "output.checkpoint must be a path")
    need(isinstance(cfg.output.log, str) and cfg.output.log, "output.log must be a path")
    return errors


def config_from_dict(raw: dict) -> Config:
    """Build and validate a :class:`Config`; raises :class:`ConfigError` listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(raw)
    cfg = Config()
    errors: list[str] = []
    sections = {"dataset": cfg.dataset, "model": cfg.model, "eval": cfg.eval, "output": cfg.output}
    for key, value in raw.items():
        if key == "seed":
            cfg.seed = value
        elif key in sections:
            _fill(sections[key], value, key, errors)
        elif key == "training":
            if not isinstance(value, dict):
                errors.append("training must be an object")
                continue
            stages = value.pop("stages", {})
            _fill(cfg.training, value, "training", errors)
            if not isinstance(stages, dict):
                errors.append("training.stages must be an object")
                continue
            for name, st in stages.items():
                if name not in cfg.training.stages:
                    errors.append(f"training.stages.{name} is not a recognised stage")
                    continue
                _fill(cfg.training.stages[name], st, f"training.stages.{name}", errors)
        else:
            errors.append(f"{key} is not a recognised section")
    if isinstance(cfg.dataset.synthetic, dict):
        merged = asdict(SyntheticSpec())
        unknown = set(cfg.dataset.synthetic) - set(merged)
        errors += [f"dataset.synthetic.{k} is not a recognised field" for k in sorted(unknown)]
        merged.update({k: v for k, v in cfg.dataset.synthetic.items() if k in merged})
        cfg.dataset.synthetic = merged
    else:
        errors.append("dataset.synthetic must be an object")
    errors += validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> Config:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(raw)
