"""Dense layers, the LSTM sequence encoder and the variational (mu, sigma) head."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError
from .tensor import Tensor

ACTIVATIONS = ("none", "relu", "tanh")
SIGMA_FLOOR = 1e-6
TABLE_UNITS = (64, 128, 256, 512, 1024)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"dense weights {self.W.shape} and bias {self.b.shape} disagree")

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation: str = "none"):
        return cls(
            tn.parameter(glorot_uniform(rng, in_dim, out_dim)),
            tn.parameter(np.zeros(out_dim)),
            activation,
        )

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}

    def __call__(self, x) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x) -> Tensor:
    x = tn.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(f"dense layer expects (batch, {layer.in_dim}) input, got {x.shape}")
    out = tn.matmul(x, layer.W) + tn.broadcast_rows(layer.b, x.shape[0])
    if layer.activation == "relu":
        return tn.relu(out)
    if layer.activation == "tanh":
        return tn.tanh(out)
    return out


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise DimensionError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ in shape")

    @property
    def width(self) -> int:
        return self.mu.shape[-1]


def vfl_forward(mu_head: DenseLayer, sigma_head: DenseLayer, features) -> GaussianParams:
    """Predict a diagonal Gaussian per sample.

    ``mu`` is the raw output of ``mu_head``; ``sigma`` goes through softplus plus a
    small floor so it is strictly positive and ``log(sigma)`` stays finite.
    """
    features = tn.as_tensor(features)
    if features.ndim != 2 or features.shape[1] != mu_head.in_dim or features.shape[1] != sigma_head.in_dim:
        raise DimensionError(
            f"VFL heads expect width {mu_head.in_dim}/{sigma_head.in_dim}, got features {features.shape}"
        )
    mu = mu_head(features)
    sigma = tn.softplus(sigma_head(features)) + SIGMA_FLOOR
    return GaussianParams(mu, sigma)


def sample_latent(g: GaussianParams, rng: np.random.Generator) -> Tensor:
    """Reparameterised draw ``mu + sigma * eps``."""
    eps = Tensor(rng.standard_normal(g.mu.shape))
    return g.mu + g.sigma * eps


GATES = ("i", "f", "o", "g")


@dataclass
class LstmLayer:
    """Single-layer LSTM. Gate ``k`` uses ``W[k]`` of shape ``(in + units, units)``
    applied to ``[x_t, h_{t-1}]``."""

    W: dict[str, Tensor]
    b: dict[str, Tensor]

    def __post_init__(self):
        if set(self.W) != set(GATES) or set(self.b) != set(GATES):
            raise ValueError(f"LSTM needs weights and biases for gates {GATES}")
        units = self.b["i"].shape[0]
        for k in GATES:
            if self.W[k].ndim != 2 or self.W[k].shape[1] != units or self.b[k].shape != (units,):
                raise DimensionError(f"gate {k}: inconsistent shapes {self.W[k].shape}, {self.b[k].shape}")

    @classmethod
    def create(cls, in_dim: int, units: int, rng: np.random.Generator, forget_bias: float = 1.0):
        if units <= 0:
            raise ValueError(f"units must be positive, got {units}")
        if units not in TABLE_UNITS:
            warnings.warn(
                f"LSTM units={units} is outside the usual sweep {TABLE_UNITS}",
                stacklevel=2,
            )
        W = {k: tn.parameter(glorot_uniform(rng, in_dim + units, units)) for k in GATES}
        b = {k: tn.parameter(np.full(units, forget_bias if k == "f" else 0.0)) for k in GATES}
        return cls(W, b)

    @property
    def units(self) -> int:
        return self.b["i"].shape[0]

    @property
    def in_dim(self) -> int:
        return self.W["i"].shape[0] - self.units

    def parameters(self) -> dict[str, Tensor]:
        params = {f"W_{k}": self.W[k] for k in GATES}
        params.update({f"b_{k}": self.b[k] for k in GATES})
        return params

    def cell(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        xh = tn.concat([x_t, h], axis=1)
        n = xh.shape[0]

        def gate(k):
            return tn.matmul(xh, self.W[k]) + tn.broadcast_rows(self.b[k], n)

        i = tn.sigmoid(gate("i"))
        f = tn.sigmoid(gate("f"))
        o = tn.sigmoid(gate("o"))
        g = tn.tanh(gate("g"))
        c_next = f * c + i * g
        h_next = o * tn.tanh(c_next)
        return h_next, c_next

    def __call__(self, seq) -> Tensor:
        return lstm_forward(self, seq)


def lstm_forward(layer: LstmLayer, seq) -> Tensor:
    """Run the recurrence from zero state and return every hidden state, ``(B, T, units)``."""
    seq = tn.as_tensor(seq)
    if seq.ndim != 3:
        raise DimensionError(f"LSTM expects (batch, T, features), got {seq.shape}")
    batch, steps, width = seq.shape
    if steps < 1:
        raise ContractError("LSTM needs at least one time step")
    if width != layer.in_dim:
        raise DimensionError(f"LSTM expects input width {layer.in_dim}, got {width}")
    h = Tensor(np.zeros((batch, layer.units)))
    c = Tensor(np.zeros((batch, layer.units)))
    hidden = []
    for t in range(steps):
        h, c = layer.cell(seq[:, t, :], h, c)
        hidden.append(h)
    return tn.stack(hidden, axis=1)


def sequence_feature(hidden) -> Tensor:
    """Last hidden state ``h_T`` of a ``(B, T, units)`` sequence."""
    hidden = tn.as_tensor(hidden)
    if hidden.ndim != 3:
        raise DimensionError(f"expected (batch, T, units) hidden states, got {hidden.shape}")
    if hidden.shape[1] < 1:
        raise ContractError("hidden sequence is empty")
    return hidden[:, -1, :]
