"""Parameter containers and the Adam update."""

from __future__ import annotations

from collections.abc import Iterator, Mapping, MutableMapping
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class ParamStore(MutableMapping):
    """Named trainable leaves, always iterated in sorted-name order."""

    def __init__(self, params: Mapping[str, np.ndarray | Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (params or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __setitem__(self, name: str, value) -> None:
        data = value.data if isinstance(value, Tensor) else value
        self._params[name] = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)

    def __delitem__(self, name: str) -> None:
        del self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: self._params[name].data for name in self}

    def copy(self) -> "ParamStore":
        return ParamStore({name: self._params[name].data.copy() for name in self})


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for name in params:
            state.first_moment[name] = np.zeros_like(params[name].data)
            state.second_moment[name] = np.zeros_like(params[name].data)
        return state


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], state: AdamState) -> ParamStore:
    """One bias-corrected Adam update, applied in place."""
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise KeyError(f"gradient keys do not match parameters: {missing}")
    if set(state.first_moment) != set(params):
        raise KeyError("optimizer state does not match parameters")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name in params:
        p = params[name].data
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p -= update
    return params


@dataclass
class RowAdam:
    """Adam over the rows of a table where each row keeps its own moments and
    step count; rows absent from a batch are untouched."""

    table: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        self.first_moment = np.zeros_like(self.table)
        self.second_moment = np.zeros_like(self.table)
        self.step_count = np.zeros(len(self.table), dtype=np.int64)

    def step(self, rows: np.ndarray, grads: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.int64)
        if len(np.unique(rows)) != len(rows):
            raise ValueError("duplicate rows in a single RowAdam step")
        self.step_count[rows] += 1
        t = self.step_count[rows][:, None].astype(np.float64)
        m = self.beta1 * self.first_moment[rows] + (1.0 - self.beta1) * grads
        v = self.beta2 * self.second_moment[rows] + (1.0 - self.beta2) * grads * grads
        self.first_moment[rows] = m
        self.second_moment[rows] = v
        mhat = m / (1.0 - self.beta1**t)
        vhat = v / (1.0 - self.beta2**t)
        self.table[rows] -= self.lr * mhat / (np.sqrt(vhat) + self.epsilon)
