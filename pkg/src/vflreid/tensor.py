"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable primitive returns a new :class:`Tensor` that remembers its
parents and a backward rule. :func:`backward` walks the graph from a scalar loss,
orders the nodes into a :class:`Tape` (reverse topological order) and replays
the backward rules. Each graph is its own tape, so separate threads building
separate graphs never share mutable state.

Broadcasting is deliberately narrow: binary ops accept equal shapes or a
single-element operand. Row-wise bias addition goes through the explicit
:func:`broadcast_rows` op, whose gradient is a column sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array that can take part in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce("sum", self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce("mean", self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    out._op = op
    return out


# -- tape / backward ------------------------------------------------------


@dataclass(frozen=True)
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of the primitive operations that produced a tensor.

    Entries are stored in forward (topological) order; :meth:`replay` runs the
    backward rules in reverse.
    """

    def __init__(self, entries: list[TapeEntry]):
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        entries = [
            TapeEntry(n._op, n._parents, n, n._backward)
            for n in order
            if n._backward is not None
        ]
        return cls(entries)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): seed}
        touched: dict[int, Tensor] = {id(root): root}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            _accumulate(entry.output, g)
            for parent, pg in zip(entry.inputs, entry.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                touched[key] = parent
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # whatever is left are leaves (no backward rule of their own)
        for key, g in grads.items():
            _accumulate(touched[key], g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every ``requires_grad`` ancestor of ``loss``.

    Gradients accumulate additively; call :meth:`Tensor.zero_grad` (or let the
    optimizer do it) between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    tape = Tape.record(loss)
    tape.replay(loss, np.ones_like(loss.data))
    return tape


# -- broadcasting helpers --------------------------------------------------


def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# -- elementwise primitives ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def divide(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "divide")
    if np.any(b.data == 0):
        idx = tuple(int(i) for i in np.argwhere(b.data == 0)[0])
        raise DomainError(f"divide: zero denominator at index {idx}")
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / b.data**2, b.shape),
        ),
        "divide",
    )


def negate(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "negate")


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    bad = ~(a.data > 0)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"log: non-positive input {a.data[idx]!r} at index {idx}")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),), "softplus")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "negate": negate,
    "scale": scale,
    "relu": relu,
    "divide": divide,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise primitive by name (``elementwise("tanh", x)``)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; choose from {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# -- linear algebra & reductions -------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def _check_axis(t: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for tensor of rank {t.ndim}")
    return axis % t.ndim


def reduce(op: str, t, axis: int | None = None) -> Tensor:
    """Sum, mean or max over all elements or along one axis."""
    t = as_tensor(t)
    axis = _check_axis(t, axis)
    shape = t.shape

    if op == "sum":
        out = t.data.sum(axis=axis)

        def back(g):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

    elif op == "mean":
        count = t.size if axis is None else shape[axis]
        out = t.data.mean(axis=axis)

        def back(g):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g / count, shape).copy(),)

    elif op == "max":
        if axis is None:
            flat = int(np.argmax(t.data))
            out = t.data.reshape(-1)[flat]

            def back(g):
                grad = np.zeros(t.size)
                grad[flat] = g
                return (grad.reshape(shape),)

        else:
            arg = np.expand_dims(np.argmax(t.data, axis=axis), axis)
            out = np.take_along_axis(t.data, arg, axis=axis).squeeze(axis)

            def back(g):
                grad = np.zeros(shape)
                np.put_along_axis(grad, arg, np.expand_dims(g, axis), axis=axis)
                return (grad,)

    else:
        raise ValueError(f"unknown reduction {op!r}")
    return _make(np.asarray(out, dtype=np.float64), (t,), back, op)


def sum(t, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return reduce("sum", t, axis)


def mean(t, axis: int | None = None) -> Tensor:
    return reduce("mean", t, axis)


def max(t, axis: int | None = None) -> Tensor:  # noqa: A001
    return reduce("max", t, axis)


# -- shape manipulation ------------------------------------------------------


def reshape(t, shape: Sequence[int]) -> Tensor:
    t = as_tensor(t)
    old = t.shape
    try:
        out = t.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"cannot reshape {old} into {tuple(shape)}") from None
    return _make(out, (t,), lambda g: (g.reshape(old),), "reshape")


def transpose(t) -> Tensor:
    t = as_tensor(t)
    if t.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {t.shape}")
    return _make(t.data.T.copy(), (t,), lambda g: (g.T,), "transpose")


def getitem(t, index) -> Tensor:
    t = as_tensor(t)
    shape = t.shape

    def back(g):
        grad = np.zeros(shape)
        np.add.at(grad, index, g)
        return (grad,)

    return _make(np.array(t.data[index], dtype=np.float64), (t,), back, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis
        ):
            raise DimensionError(
                f"concat: shapes {[x.shape for x in tensors]} differ off axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes {[x.shape for x in tensors]} differ")
    axis = axis % (len(shape) + 1)
    n = len(tensors)
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def broadcast_rows(row, n: int) -> Tensor:
    """Repeat a length-k vector into an ``n x k`` matrix."""
    row = as_tensor(row)
    if row.ndim != 1:
        raise DimensionError(f"broadcast_rows expects a vector, got shape {row.shape}")
    return _make(
        np.broadcast_to(row.data, (n, row.shape[0])).copy(),
        (row,),
        lambda g: (g.sum(axis=0),),
        "broadcast_rows",
    )


# -- composites ---------------------------------------------------------------


def logsumexp_rows(x) -> Tensor:
    """Row-wise ``log(sum(exp(x)))`` shifted by the (constant) row max."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"logsumexp_rows expects a matrix, got shape {x.shape}")
    shift = x.data.max(axis=1)
    shifted = sub(x, Tensor(np.broadcast_to(shift[:, None], x.shape)))
    return add(log(sum(exp(shifted), axis=1)), Tensor(shift))


def constant_view(t: Tensor) -> Tensor:
    """A non-differentiable tensor sharing ``t``'s data buffer (no copy)."""
    out = Tensor.__new__(Tensor)
    out.data = t.data
    out.requires_grad = False
    out.grad = None
    out.name = t.name
    out._parents = ()
    out._backward = None
    out._op = "leaf"
    return out


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
