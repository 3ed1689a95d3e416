"""Backbone -> variational head -> LSTM encoder, with staged training and
inference-time feature concatenation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tn
from .data import (
    AUGMENT_OPS,
    AugmentConfig,
    Item,
    SequenceBatch,
    build_query_sequence,
    epoch_batches,
    item_array,
    rng_stream,
)
from .errors import ConfigError, DimensionError
from .layers import (
    DenseLayer,
    GaussianParams,
    LstmLayer,
    sample_latent,
    sequence_feature,
    vfl_forward,
)
from .losses import KL_FORMS, LossValue, LossWeights, combined_loss, softmax_cross_entropy
from .optim import AdamState, LrSchedule, adam_step
from .tensor import Tensor

logger = logging.getLogger(__name__)

COMPONENTS = ("backbone", "vfl", "lstm")
BACKBONE_KINDS = ("passthrough", "mlp_stub")
REGIMES = ("separate", "joint_vfl")


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    backbone: str = "mlp_stub"
    backbone_hidden: int = 256
    feature_dim: int = 1024
    vfl_dim: int = 256
    lstm_units: int = 256
    time_steps: int = 3
    alpha: float = 0.1
    kl_form: str = "variance"
    sample_latent: bool = False
    regime: str = "separate"
    l2_normalize_parts: bool = False

    def problems(self) -> list[str]:
        out = []
        for name in ("input_dim", "backbone_hidden", "feature_dim", "vfl_dim", "lstm_units", "time_steps"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                out.append(f"{name} must be a positive integer, got {getattr(self, name)!r}")
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            out.append(f"num_classes must be an integer >= 2, got {self.num_classes!r}")
        if self.backbone not in BACKBONE_KINDS:
            out.append(f"backbone must be one of {BACKBONE_KINDS}, got {self.backbone!r}")
        if self.backbone == "passthrough" and self.feature_dim != self.input_dim:
            out.append(f"feature_dim must equal input_dim ({self.input_dim}) for a passthrough backbone")
        if not isinstance(self.alpha, (int, float)) or not self.alpha >= 0:
            out.append(f"alpha must be >= 0, got {self.alpha!r}")
        if self.kl_form not in KL_FORMS:
            out.append(f"kl_form must be one of {KL_FORMS}, got {self.kl_form!r}")
        if self.regime not in REGIMES:
            out.append(f"regime must be one of {REGIMES}, got {self.regime!r}")
        return out

    def validate(self) -> "ModelConfig":
        errors = self.problems()
        if errors:
            raise ConfigError(errors)
        return self

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(float(self.alpha), self.kl_form)

    @property
    def output_dim(self) -> int:
        return self.vfl_dim if self.regime == "joint_vfl" else self.lstm_units + self.vfl_dim


def _frozen_dense(layer: DenseLayer) -> DenseLayer:
    return DenseLayer(tn.constant_view(layer.W), tn.constant_view(layer.b), layer.activation)


@dataclass
class Backbone:
    kind: str
    layers: list[DenseLayer]
    out_dim: int

    @classmethod
    def create(cls, config: ModelConfig, rng: np.random.Generator) -> "Backbone":
        if config.backbone == "passthrough":
            return cls("passthrough", [], config.input_dim)
        layers = [
            DenseLayer.create(config.input_dim, config.backbone_hidden, rng, "relu"),
            DenseLayer.create(config.backbone_hidden, config.feature_dim, rng, "none"),
        ]
        return cls("mlp_stub", layers, config.feature_dim)

    def __call__(self, x) -> Tensor:
        x = tn.as_tensor(x)
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for i, layer in enumerate(self.layers):
            for k, t in layer.parameters().items():
                params[f"{i}.{k}"] = t
        return params

    def frozen(self) -> "Backbone":
        return Backbone(self.kind, [_frozen_dense(l) for l in self.layers], self.out_dim)


@dataclass
class PipelineModel:
    """The three components plus one softmax classifier head per training stage."""

    config: ModelConfig
    backbone: Backbone
    backbone_classifier: DenseLayer
    mu_head: DenseLayer
    sigma_head: DenseLayer
    vfl_classifier: DenseLayer
    lstm: LstmLayer
    lstm_classifier: DenseLayer
    class_ids: list[str] = field(default_factory=list)
    trained: dict[str, bool] = field(default_factory=lambda: {c: False for c in COMPONENTS})

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, class_ids: Sequence[str] | None = None) -> "PipelineModel":
        config.validate()
        rng = np.random.default_rng(seed)
        backbone = Backbone.create(config, rng)
        C = config.num_classes
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lstm = LstmLayer.create(config.vfl_dim, config.lstm_units, rng)
        model = cls(
            config=config,
            backbone=backbone,
            backbone_classifier=DenseLayer.create(backbone.out_dim, C, rng),
            mu_head=DenseLayer.create(backbone.out_dim, config.vfl_dim, rng),
            sigma_head=DenseLayer.create(backbone.out_dim, config.vfl_dim, rng),
            vfl_classifier=DenseLayer.create(config.vfl_dim, C, rng),
            lstm=lstm,
            lstm_classifier=DenseLayer.create(config.lstm_units, C, rng),
            class_ids=list(class_ids) if class_ids is not None else [],
        )
        if len(model.class_ids) > C:
            raise ConfigError(f"num_classes={C} is smaller than the {len(model.class_ids)} identities given")
        return model

    @property
    def class_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.class_ids)}

    def component_parameters(self, component: str) -> dict[str, Tensor]:
        if component == "backbone":
            groups = {"backbone": self.backbone.parameters(), "backbone_classifier": self.backbone_classifier.parameters()}
        elif component == "vfl":
            groups = {
                "mu_head": self.mu_head.parameters(),
                "sigma_head": self.sigma_head.parameters(),
                "vfl_classifier": self.vfl_classifier.parameters(),
            }
        elif component == "lstm":
            groups = {"lstm": self.lstm.parameters(), "lstm_classifier": self.lstm_classifier.parameters()}
        else:
            raise ConfigError(f"unknown component {component!r}; expected one of {COMPONENTS}")
        return {f"{g}.{k}": t for g, params in groups.items() for k, t in params.items()}

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for c in COMPONENTS:
            out.update(self.component_parameters(c))
        return out

    def with_frozen(self, components: Iterable[str]) -> "PipelineModel":
        """A view of this model whose ``components`` are non-differentiable.

        Arrays are shared, nothing is copied, and the original stays untouched,
        so a read-only view can be used from several threads at once.
        """
        components = set(components)
        unknown = components - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown component(s) {sorted(unknown)}")
        kw = dict(
            config=self.config,
            backbone=self.backbone,
            backbone_classifier=self.backbone_classifier,
            mu_head=self.mu_head,
            sigma_head=self.sigma_head,
            vfl_classifier=self.vfl_classifier,
            lstm=self.lstm,
            lstm_classifier=self.lstm_classifier,
            class_ids=self.class_ids,
            trained=self.trained,
        )
        if "backbone" in components:
            kw["backbone"] = self.backbone.frozen()
            kw["backbone_classifier"] = _frozen_dense(self.backbone_classifier)
        if "vfl" in components:
            for k in ("mu_head", "sigma_head", "vfl_classifier"):
                kw[k] = _frozen_dense(getattr(self, k))
        if "lstm" in components:
            kw["lstm"] = LstmLayer(
                {k: tn.constant_view(w) for k, w in self.lstm.W.items()},
                {k: tn.constant_view(b) for k, b in self.lstm.b.items()},
            )
            kw["lstm_classifier"] = _frozen_dense(self.lstm_classifier)
        return PipelineModel(**kw)

    def inference_view(self) -> "PipelineModel":
        return self.with_frozen(COMPONENTS)


# -- forward passes -------------------------------------------------------------------


def _flatten_steps(model: PipelineModel, inputs) -> tuple[Tensor, int, int]:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim < 3:
        raise DimensionError(f"expected (batch, T, ...) inputs, got shape {inputs.shape}")
    B, T = inputs.shape[:2]
    flat = inputs.reshape(B * T, -1)
    if flat.shape[1] != model.config.input_dim:
        raise DimensionError(
            f"model expects {model.config.input_dim} input values per instance, got {flat.shape[1]}"
        )
    return Tensor(flat), B, T


def _vfl_steps(model: PipelineModel, inputs) -> tuple[GaussianParams, int, int]:
    flat, B, T = _flatten_steps(model, inputs)
    feats = model.backbone(flat)
    return vfl_forward(model.mu_head, model.sigma_head, feats), B, T


def forward_embed(model: PipelineModel, batch) -> tuple[Tensor, Tensor]:
    """``(mu, lstm_hidden)`` of shapes ``(B, T, n)`` and ``(B, T, units)``.

    Only the mean head runs here; ``sigma`` is left to the losses that need it.
    """
    inputs = batch.inputs if isinstance(batch, SequenceBatch) else batch
    flat, B, T = _flatten_steps(model, inputs)
    mu = model.mu_head(model.backbone(flat)).reshape(B, T, model.config.vfl_dim)
    return mu, model.lstm(mu)


def _zero() -> Tensor:
    return Tensor(0.0)


def stage_loss(
    model: PipelineModel,
    train: Sequence[str],
    batch: SequenceBatch,
    rng: np.random.Generator | None = None,
) -> LossValue:
    """Training objective for a stage whose trainable set is ``train``.

    The LSTM stage classifies the last hidden state; a stage containing the VFL
    head uses the identification loss on ``mu`` plus the weighted KL term; a
    backbone-only stage classifies raw backbone features. In the two
    per-instance cases every time step is a separate sample.
    """
    train = set(train)
    labels = batch.labels
    if "lstm" in train:
        _, hidden = forward_embed(model, batch)
        logits = model.lstm_classifier(sequence_feature(hidden))
        id_term = softmax_cross_entropy(logits, labels)
        return LossValue(id_term, id_term, _zero())
    step_labels = np.repeat(labels, batch.time_steps, axis=0)
    if "vfl" in train:
        g, _, _ = _vfl_steps(model, batch.inputs)
        z = g.mu
        if model.config.sample_latent:
            z = sample_latent(g, rng if rng is not None else np.random.default_rng())
        logits = model.vfl_classifier(z)
        return combined_loss(step_labels, logits, g, model.config.loss_weights)
    if "backbone" in train:
        flat, _, _ = _flatten_steps(model, batch.inputs)
        logits = model.backbone_classifier(model.backbone(flat))
        id_term = softmax_cross_entropy(logits, step_labels)
        return LossValue(id_term, id_term, _zero())
    raise ConfigError("stage trains no component")


def _loss_branch(train: Iterable[str]) -> str:
    train = set(train)
    for c in ("lstm", "vfl", "backbone"):
        if c in train:
            return c
    raise ConfigError("stage trains no component")


def stage_parameters(model: PipelineModel, train: Sequence[str]) -> dict[str, Tensor]:
    """Parameters updated by a stage: its components, minus classifier heads the
    stage objective never reaches (the backbone head under joint training)."""
    branch = _loss_branch(train)
    params: dict[str, Tensor] = {}
    for c in train:
        for name, t in model.component_parameters(c).items():
            head = name.split(".")[0]
            if head.endswith("_classifier") and head != f"{branch}_classifier":
                continue
            params[name] = t
    return params


def end_to_end_loss(model: PipelineModel, batch: SequenceBatch) -> Tensor:
    """Sum of all three stage objectives with every component differentiable."""
    total = stage_loss(model, ["backbone"], batch).total
    total = total + stage_loss(model, ["vfl"], batch).total
    return total + stage_loss(model, ["lstm"], batch).total


# -- training -------------------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    name: str
    train: tuple[str, ...]
    frozen: tuple[str, ...]
    epochs: int
    schedule: LrSchedule = LrSchedule()


@dataclass(frozen=True)
class TrainPlan:
    regime: str
    stages: tuple[Stage, ...]

    @classmethod
    def separate(
        cls,
        epochs: Sequence[int] = (70, 50, 70),
        schedules: Sequence[LrSchedule] | None = None,
    ) -> "TrainPlan":
        if schedules is None:
            schedules = (LrSchedule(decay_every=30), LrSchedule(decay_every=20), LrSchedule(decay_every=30))
        stages = tuple(
            Stage(c, (c,), COMPONENTS[:i], int(e), s)
            for i, (c, e, s) in enumerate(zip(COMPONENTS, epochs, schedules))
        )
        return cls("separate", stages).validate()

    @classmethod
    def joint_vfl(cls, epochs: int = 70, schedule: LrSchedule | None = None) -> "TrainPlan":
        schedule = schedule or LrSchedule(decay_every=30)
        return cls("joint_vfl", (Stage("backbone+vfl", ("backbone", "vfl"), (), int(epochs), schedule),)).validate()

    def validate(self) -> "TrainPlan":
        errors = []
        if self.regime not in REGIMES:
            errors.append(f"regime must be one of {REGIMES}, got {self.regime!r}")
        for st in self.stages:
            if st.epochs < 1:
                errors.append(f"stage {st.name}: epochs must be >= 1")
            for c in st.train + st.frozen:
                if c not in COMPONENTS:
                    errors.append(f"stage {st.name}: unknown component {c!r}")
        if self.regime == "separate":
            if [st.train for st in self.stages] != [(c,) for c in COMPONENTS]:
                errors.append("separate regime must train backbone, vfl, lstm one per stage in that order")
            for i, st in enumerate(self.stages):
                if set(st.frozen) != set(COMPONENTS[:i]):
                    errors.append(f"stage {st.name}: earlier components {COMPONENTS[:i]} must be frozen")
        elif self.regime == "joint_vfl":
            if len(self.stages) != 1 or set(self.stages[0].train) != {"backbone", "vfl"}:
                errors.append("joint_vfl regime is a single stage training backbone and vfl together")
        if errors:
            raise ConfigError(errors)
        return self


@dataclass
class EpochLog:
    epoch: int
    stage: str
    lr: float
    total: float
    id: float
    kl: float

    def format(self) -> str:
        return (
            f"epoch={self.epoch} stage={self.stage} lr={self.lr!r} "
            f"total={self.total!r} id={self.id!r} kl={self.kl!r}"
        )


def train_stage(
    model: PipelineModel,
    stage: Stage,
    items: Sequence[Item],
    seed: int,
    batch_size: int = 16,
    stage_index: int = 0,
    augment_ops: Iterable[str] = AUGMENT_OPS,
    augment_config: AugmentConfig = AugmentConfig(),
) -> list[EpochLog]:
    """Train the stage's components with Adam; everything else is held fixed."""
    for c in stage.train + stage.frozen:
        if c not in COMPONENTS:
            raise ConfigError(f"stage {stage.name!r} references unknown component {c!r}")
    if stage.epochs < 1:
        raise ConfigError(f"stage {stage.name!r} needs at least one epoch")
    if not model.class_ids:
        model.class_ids = sorted({it.id for it in items})
    class_index = model.class_index
    missing = {it.id for it in items} - set(class_index)
    if missing or len(class_index) > model.config.num_classes:
        raise ConfigError(f"identities {sorted(missing)[:5]} do not fit the model's {model.config.num_classes} classes")

    view = model.with_frozen(set(COMPONENTS) - set(stage.train))
    params = stage_parameters(model, stage.train)
    for p in params.values():
        p.grad = None
    state = AdamState()
    rng = rng_stream(seed, stage_index)
    ops = tuple(augment_ops)
    logs = []
    for epoch in range(stage.epochs):
        lr = stage.schedule(epoch)
        sums = np.zeros(3)
        batches = epoch_batches(items, class_index, model.config.time_steps, batch_size, rng, ops, augment_config)
        for batch in batches:
            loss = stage_loss(view, stage.train, batch, rng)
            tn.backward(loss.total)
            adam_step(state, params, lr)
            sums += loss.values()
        total, id_term, kl = sums / len(batches)
        entry = EpochLog(epoch, stage.name, lr, float(total), float(id_term), float(kl))
        logger.debug(entry.format())
        logs.append(entry)
    for c in stage.train:
        model.trained[c] = True
    return logs


def run_train_plan(
    model: PipelineModel,
    plan: TrainPlan,
    items: Sequence[Item],
    seed: int,
    batch_size: int = 16,
    augment_ops: Iterable[str] = AUGMENT_OPS,
    augment_config: AugmentConfig = AugmentConfig(),
) -> tuple[PipelineModel, dict[str, list[EpochLog]]]:
    plan.validate()
    model.config.regime = plan.regime
    logs = {}
    for i, stage in enumerate(plan.stages):
        logs[stage.name] = train_stage(
            model, stage, items, seed, batch_size, i, augment_ops, augment_config
        )
    return model, logs


# -- inference ------------------------------------------------------------------------

FEATURE_PARTS = ("concat", "lstm", "vfl")


def _l2(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


def embed_sequences(
    model: PipelineModel,
    inputs: np.ndarray,
    parts: str = "concat",
    l2_normalize_parts: bool | None = None,
) -> np.ndarray:
    """Features for ``(N, T, ...)`` query sequences whose step 0 is the original."""
    if parts not in FEATURE_PARTS:
        raise ValueError(f"parts must be one of {FEATURE_PARTS}, got {parts!r}")
    if l2_normalize_parts is None:
        l2_normalize_parts = model.config.l2_normalize_parts
    view = model.inference_view()
    mu, hidden = forward_embed(view, inputs)
    mu0 = mu.data[:, 0, :]
    last = hidden.data[:, -1, :]
    if l2_normalize_parts:
        mu0, last = _l2(mu0), _l2(last)
    if parts == "vfl" or (parts == "concat" and model.config.regime == "joint_vfl"):
        return mu0.copy()
    if parts == "lstm":
        return last.copy()
    return np.concatenate([last, mu0], axis=1)


def infer_feature(
    model: PipelineModel,
    query: Item,
    rng: np.random.Generator,
    parts: str = "concat",
    l2_normalize_parts: bool | None = None,
    augment_ops: Iterable[str] = AUGMENT_OPS,
    augment_config: AugmentConfig = AugmentConfig(),
) -> np.ndarray:
    """Final descriptor of one query: ``[h_T, mu(original)]``, or ``mu`` alone
    for a model trained without the LSTM stage."""
    needed = ("backbone", "vfl") if model.config.regime == "joint_vfl" else COMPONENTS
    if not all(model.trained.get(c) for c in needed):
        warnings.warn("running inference with untrained components", stacklevel=2)
    seq = build_query_sequence(query, model.config.time_steps, rng, augment_ops, augment_config)
    inputs = np.stack([item_array(x) for x in seq])[None]
    return embed_sequences(model, inputs, parts, l2_normalize_parts)[0]


def embed_items(
    model: PipelineModel,
    items: Sequence[Item],
    seed: int,
    parts: str = "concat",
    l2_normalize_parts: bool | None = None,
    augment_ops: Iterable[str] = AUGMENT_OPS,
    augment_config: AugmentConfig = AugmentConfig(),
    chunk: int = 256,
) -> np.ndarray:
    """Batch version of :func:`infer_feature`; item ``i`` uses ``rng_stream(seed, i)``
    so results do not depend on chunking or ordering."""
    out = []
    T = model.config.time_steps
    for start in range(0, len(items), chunk):
        seqs = []
        for i in range(start, min(start + chunk, len(items))):
            seq = build_query_sequence(items[i], T, rng_stream(seed, i), augment_ops, augment_config)
            seqs.append(np.stack([item_array(x) for x in seq]))
        out.append(embed_sequences(model, np.stack(seqs), parts, l2_normalize_parts))
    if not out:
        return np.zeros((0, model.config.output_dim))
    return np.concatenate(out, axis=0)


def model_summary(model: PipelineModel) -> dict:
    return {
        "config": asdict(model.config),
        "parameters": {k: list(v.shape) for k, v in model.named_parameters().items()},
        "trained": dict(model.trained),
    }
