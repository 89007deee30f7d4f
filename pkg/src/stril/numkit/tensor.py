"""Reverse-mode differentiation over a dynamically recorded graph of fp64 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.  Calling
:func:`forward_backward` on a scalar root walks that record in reverse
topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or infinity."""

    def __init__(self, op_tag: str, where: str = "forward"):
        super().__init__(f"non-finite value in {where} of op '{op_tag}'")
        self.op_tag = op_tag


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A node of the computation record.

    Leaves created with ``requires_grad=True`` (parameters) collect gradients;
    constants do not, and no gradient work is done for subgraphs that only
    touch constants.
    """

    __slots__ = ("data", "grad", "op_tag", "parents", "_backward", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        op_tag: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        backward: BackwardFn | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op_tag = op_tag
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad
        self.name = name

    # -- conveniences -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op_tag}{label}, shape={self.shape})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar -----------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, op_tag: str, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op_tag)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op_tag=op_tag)
    return Tensor(data, requires_grad=True, op_tag=op_tag, parents=parents, backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _record(out, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _record(out, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _record(
        out,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _record(out, "div", (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _record(out, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- nonlinearities -------------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)

    def backward(g):
        return (g * 0.5 * (1.0 + np.tanh(0.5 * x)),)

    return _record(out, "softplus", (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _record(out, "log", (a,), lambda g: (g / a.data,))


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient is zero where the floor is active."""
    a = as_tensor(a)
    keep = a.data >= floor
    out = np.where(keep, a.data, floor)
    return _record(out, "clip_min", (a,), lambda g: (g * keep,))


# -- reductions and shape ops -----------------------------------------------------

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), "sum", (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _record(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data.T, "transpose", (a,), lambda g: (g.T,))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def backward(g):
        full = np.zeros(a.shape)
        if basic:
            # basic indexing never aliases an element twice
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(np.array(out), "getitem", (a,), backward)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, "concat", tuple(parts), backward)


def embed(table, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradients scatter-add into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    out = table.data[idx]

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _record(out, "embed", (table,), backward)


def pick(a, indices) -> Tensor:
    """Select one entry per row along the last axis: ``a[..., indices]``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    lead = np.indices(idx.shape)
    out = a.data[(*lead, idx)]

    def backward(g):
        full = np.zeros(a.shape)
        full[(*lead, idx)] = g
        return (full,)

    return _record(out, "pick", (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _record(out, "log_softmax", (a,), backward)


# -- gradients ---------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate into ``.grad`` on every leaf reachable from ``root``."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if root.requires_grad:
        _run_backward(root, _topological(root))


def _run_backward(root: Tensor, order: list[Tensor]) -> None:
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(node.op_tag, where="backward")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def forward_backward(
    root: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor] | None = None
) -> dict[str, np.ndarray]:
    """Gradient of scalar ``root`` with respect to named leaves.

    ``params`` maps names to leaf tensors; leaves that ``root`` does not
    depend on receive zero gradients.  When ``params`` is omitted, every
    named leaf reached from ``root`` is reported.
    """
    if root.data.size != 1:
        raise ValueError(f"forward_backward needs a scalar root, got shape {root.shape}")
    if isinstance(params, Mapping):
        named = dict(params)
    elif params is None:
        named = {}
    else:
        named = {p.name: p for p in params}
    order = _topological(root) if root.requires_grad else []
    leaves = [n for n in order if n._backward is None]
    for leaf in (*leaves, *named.values()):
        leaf.grad = None
    if order:
        _run_backward(root, order)
    if params is None:
        return {n.name: n.grad for n in leaves if n.name}
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in named.items()}
