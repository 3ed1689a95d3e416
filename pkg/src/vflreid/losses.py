"""Identification loss, KL regulariser and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError, DomainError
from .layers import GaussianParams
from .tensor import Tensor

KL_FORMS = ("variance", "stddev")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    kl_form: str = "variance"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.kl_form not in KL_FORMS:
            raise ValueError(f"kl_form must be one of {KL_FORMS}, got {self.kl_form!r}")


@dataclass
class LossValue:
    total: Tensor
    id_term: Tensor
    kl_term: Tensor

    def values(self) -> tuple[float, float, float]:
        return self.total.item(), self.id_term.item(), self.kl_term.item()


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_one_hot(target: np.ndarray) -> None:
    ok = np.all((target == 0) | (target == 1), axis=1) & (target.sum(axis=1) == 1)
    if not np.all(ok):
        row = int(np.argmin(ok))
        raise ContractError(f"target row {row} is not one-hot: {target[row].tolist()}")


def softmax_cross_entropy(logits, target) -> Tensor:
    """Mean over the batch of ``-sum_i t_i log softmax(p)_i``.

    Uses ``logsumexp(p) - <t, p>`` with a max shift, so logits in the
    thousands neither overflow nor produce NaN.
    """
    logits = tn.as_tensor(logits)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if logits.ndim != 2 or target.shape != logits.shape:
        raise DimensionError(f"logits {logits.shape} and target {target.shape} must be equal (batch, C)")
    if logits.shape[1] < 2:
        raise ContractError(f"softmax needs at least 2 classes, got {logits.shape[1]}")
    _check_one_hot(target)
    picked = tn.sum(logits * Tensor(target), axis=1)
    return tn.mean(tn.logsumexp_rows(logits) - picked)


def kl_to_standard_normal(g: GaussianParams, form: str = "variance") -> Tensor:
    """KL-style penalty pulling ``N(mu, sigma)`` towards ``N(0, 1)``, averaged over the batch.

    ``form="variance"`` reads ``sigma`` as a variance and evaluates
    ``-1/2 sum(1 + log(sigma) - mu^2 - sigma)``. ``form="stddev"`` reads it as
    a standard deviation: ``-1/2 sum(1 + log(sigma^2) - mu^2 - sigma^2)``.
    Both are zero at ``mu=0, sigma=1``.
    """
    if form not in KL_FORMS:
        raise ValueError(f"kl form must be one of {KL_FORMS}, got {form!r}")
    bad = ~(g.sigma.data > 0)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"sigma must be positive, got {g.sigma.data[idx]!r} at index {idx}")
    mu_sq = g.mu * g.mu
    if form == "variance":
        inner = 1.0 + tn.log(g.sigma) - mu_sq - g.sigma
    else:
        var = g.sigma * g.sigma
        inner = 1.0 + tn.log(var) - mu_sq - var
    per_sample = tn.sum(inner, axis=-1) if inner.ndim > 1 else tn.sum(inner)
    return tn.scale(tn.mean(per_sample), -0.5)


def combined_loss(target, logits, g: GaussianParams, weights: LossWeights = LossWeights()) -> LossValue:
    id_term = softmax_cross_entropy(logits, target)
    kl_term = kl_to_standard_normal(g, weights.kl_form)
    total = id_term + tn.scale(kl_term, weights.alpha)
    return LossValue(total, id_term, kl_term)
