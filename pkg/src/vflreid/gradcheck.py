"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as tn
from .data import SequenceBatch
from .layers import DenseLayer, GaussianParams, LstmLayer, lstm_forward, vfl_forward
from .losses import kl_to_standard_normal, one_hot, softmax_cross_entropy
from .pipeline import ModelConfig, PipelineModel, end_to_end_loss
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


def numerical_gradient(f: Callable[[], float], t: Tensor, h: float = STEP) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = STEP
) -> dict[str, float]:
    """Max relative error per named parameter between backprop and central differences."""
    for p in params.values():
        p.grad = None
    tn.backward(loss_fn())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    for p in params.values():
        p.grad = None
    errors = {}
    for k, p in params.items():
        numeric = numerical_gradient(lambda: loss_fn().item(), p, h)
        errors[k] = relative_error(analytic[k], numeric)
    return errors


@dataclass
class ComponentResult:
    name: str
    errors: dict[str, float]
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error <= self.tolerance


@dataclass
class GradcheckReport:
    components: list[ComponentResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.components)

    def lines(self) -> list[str]:
        out = []
        for c in self.components:
            status = "PASS" if c.passed else "FAIL"
            out.append(f"{status} {c.name} max_rel_err={c.max_error:.3e}")
            for k, e in c.errors.items():
                out.append(f"    {k} rel_err={e:.3e}")
        out.append("gradcheck " + ("passed" if self.passed else "FAILED"))
        return out


def _random_graph_errors(rng: np.random.Generator) -> dict[str, float]:
    a = tn.parameter(rng.normal(size=(3, 4)))
    b = tn.parameter(rng.normal(size=(4, 2)))
    c = tn.parameter(rng.uniform(0.5, 2.0, size=(3, 2)))

    def loss():
        x = tn.tanh(a @ b) * tn.sigmoid(c) + tn.softplus(-c)
        y = tn.log(c) * tn.exp(tn.scale(x, 0.3))
        return tn.mean(tn.concat([y, tn.reshape(x, (3, 2))], axis=1)) + tn.max(tn.sum(y, axis=0))

    return check_gradients(loss, {"A": a, "B": b, "C": c})


def _dense_errors(rng: np.random.Generator) -> dict[str, float]:
    errors = {}
    x = Tensor(rng.normal(size=(4, 5)))
    for act in ("none", "relu", "tanh"):
        layer = DenseLayer.create(5, 3, rng, act)
        layer.b.data[:] = rng.normal(size=3) * 0.1
        w = Tensor(rng.normal(size=(4, 3)))
        errs = check_gradients(lambda: tn.sum(layer(x) * w), layer.parameters())
        errors.update({f"dense[{act}].{k}": v for k, v in errs.items()})
    return errors


def _lstm_errors(rng: np.random.Generator, steps: int) -> dict[str, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        layer = LstmLayer.create(3, 3, rng)
    for b in layer.b.values():
        b.data += rng.normal(size=b.shape) * 0.1
    seq = tn.parameter(rng.normal(size=(2, steps, 3)))
    w = Tensor(rng.normal(size=(2, steps, 3)))
    params = {f"lstm.{k}": v for k, v in layer.parameters().items()}
    params["input"] = seq
    return check_gradients(lambda: tn.sum(lstm_forward(layer, seq) * w), params)


def _ce_errors(rng: np.random.Generator) -> dict[str, float]:
    logits = tn.parameter(rng.normal(size=(5, 4)) * 3)
    target = one_hot(rng.integers(0, 4, size=5), 4)
    return check_gradients(lambda: softmax_cross_entropy(logits, target), {"logits": logits})


def _kl_errors(rng: np.random.Generator, form: str) -> dict[str, float]:
    mu = tn.parameter(rng.normal(size=(3, 4)))
    pre = tn.parameter(rng.normal(size=(3, 4)))

    def loss():
        sigma = tn.softplus(pre) + 1e-6
        return kl_to_standard_normal(GaussianParams(mu, sigma), form)

    return check_gradients(loss, {"mu": mu, "sigma_pre": pre})


def _vfl_errors(rng: np.random.Generator) -> dict[str, float]:
    mu_head = DenseLayer.create(6, 4, rng)
    sigma_head = DenseLayer.create(6, 4, rng)
    x = Tensor(rng.normal(size=(3, 6)))

    def loss():
        g = vfl_forward(mu_head, sigma_head, x)
        return kl_to_standard_normal(g) + tn.sum(g.mu)

    params = {f"mu_head.{k}": v for k, v in mu_head.parameters().items()}
    params.update({f"sigma_head.{k}": v for k, v in sigma_head.parameters().items()})
    return check_gradients(loss, params)


def tiny_model(seed: int = 0, input_dim: int = 8, num_classes: int = 2, backbone: str = "mlp_stub") -> PipelineModel:
    config = ModelConfig(
        input_dim=input_dim,
        num_classes=num_classes,
        backbone=backbone,
        backbone_hidden=6,
        feature_dim=8,
        vfl_dim=4,
        lstm_units=4,
        time_steps=3,
        alpha=0.1,
    )
    return PipelineModel.create(config, seed=seed, class_ids=[f"id{i}" for i in range(num_classes)])


def _end_to_end_errors(rng: np.random.Generator, seed: int) -> dict[str, float]:
    model = tiny_model(seed)
    for p in model.named_parameters().values():
        if p.ndim == 1:
            p.data += rng.normal(size=p.shape) * 0.1
    inputs = rng.uniform(0, 1, size=(2, 3, 8))
    batch = SequenceBatch(inputs, one_hot([0, 1], 2))
    return check_gradients(lambda: end_to_end_loss(model, batch), model.named_parameters())


def run_gradcheck(seed: int = 0, tolerance: float = TOLERANCE) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    suites = [
        ("ndtensor.composite", lambda: _random_graph_errors(rng)),
        ("layers.dense", lambda: _dense_errors(rng)),
        ("layers.vfl", lambda: _vfl_errors(rng)),
        ("layers.lstm_T2", lambda: _lstm_errors(rng, 2)),
        ("layers.lstm_T3", lambda: _lstm_errors(rng, 3)),
        ("losses.softmax_cross_entropy", lambda: _ce_errors(rng)),
        ("losses.kl_variance", lambda: _kl_errors(rng, "variance")),
        ("losses.kl_stddev", lambda: _kl_errors(rng, "stddev")),
        ("pipeline.end_to_end", lambda: _end_to_end_errors(rng, seed)),
    ]
    report = GradcheckReport()
    for name, fn in suites:
        report.components.append(ComponentResult(name, fn(), tolerance))
    return report
