"""Adam and step-decay learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 1e-4
    decay_factor: float = 0.1
    decay_every: int = 30

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ValueError(f"initial_lr must be positive, got {self.initial_lr}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")

    def __call__(self, epoch: int) -> float:
        return lr_at_epoch(self, epoch)


def lr_at_epoch(schedule: LrSchedule, epoch: int) -> float:
    """``initial_lr * decay_factor ** (epoch // decay_every)``.

    Evaluated in decimal so that e.g. ``1e-4 * 0.1**2`` comes out as ``1e-6``
    rather than ``1.0000000000000002e-06``.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    k = epoch // schedule.decay_every
    value = Decimal(repr(schedule.initial_lr)) * Decimal(repr(schedule.decay_factor)) ** k
    return float(value)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, Tensor], lr: float) -> None:
    """One bias-corrected Adam update over ``params``; zeroes their grads afterwards."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


class Adam:
    """Thin convenience wrapper binding an :class:`AdamState` to a parameter set."""

    def __init__(self, params: Mapping[str, Tensor], **hyper):
        self.params = dict(params)
        self.state = AdamState(**hyper)

    def step(self, lr: float) -> None:
        adam_step(self.state, self.params, lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
