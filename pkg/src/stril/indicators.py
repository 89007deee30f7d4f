"""Randomness Indicator, Exploited Level estimators and percentile filtering."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numkit import AdamState, ParamStore, Tensor, adam_step, forward_backward, make_rng
from .numkit import ops as tn
from .pvrnn import PVRNNModel, UntrainedModelError, decoder_entropies

DEFAULT_MIN_NEIGHBORS = 20
MIN_LOSING_LABELS = 10


# -- Randomness Indicator -----------------------------------------------------------------

def _require_trained(model: PVRNNModel) -> None:
    if not model.trained:
        raise UntrainedModelError("randomness indicator needs a trained P-VRNN (model.trained is False)")


def randomness_indicators(model: PVRNNModel, trajs, reps: np.ndarray, seed: int = 0, batch_size: int = 256) -> np.ndarray:
    """Cumulative decoder entropy of each trajectory, teacher forced, with
    posterior noise drawn from the trajectory's own ``(seed, "score", id)`` stream."""
    _require_trained(model)
    trajs = list(trajs)
    reps = np.asarray(reps, dtype=np.float64)
    out = np.zeros(len(trajs))
    for s in range(0, len(trajs), batch_size):
        ent, _ = decoder_entropies(model, trajs[s : s + batch_size], reps[s : s + batch_size], seed=seed)
        out[s : s + len(ent)] = [float(e.sum()) for e in ent]
    return out


def randomness_indicator(model: PVRNNModel, traj, l, seed: int = 0) -> float:
    return float(randomness_indicators(model, [traj], np.asarray(l)[None], seed=seed)[0])


# -- Exploited Level: neighbourhood estimate -----------------------------------------------

def el_delta(target_l, labeled_l, rewards, delta: float) -> float | None:
    """Mean loss magnitude over labelled neighbours strictly within ``delta``
    whose reward is <= 0; ``None`` when no neighbour lost."""
    return el_delta_many(np.asarray(target_l, dtype=np.float64)[None], labeled_l, rewards, delta)[0]


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def el_delta_many(targets, labeled_l, rewards, delta: float) -> list[float | None]:
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    labeled_l = np.atleast_2d(np.asarray(labeled_l, dtype=np.float64))
    rewards = np.asarray(rewards, dtype=np.float64)
    if not delta > 0:
        raise ValueError("delta must be positive")
    out: list[float | None] = []
    loss = np.maximum(-rewards, 0.0)
    lose = rewards <= 0
    for s in range(0, len(targets), 512):
        near = _pairwise(targets[s : s + 512], labeled_l) < delta
        hits = near & lose
        counts = hits.sum(axis=1)
        sums = (hits * loss).sum(axis=1)
        out.extend(None if c == 0 else float(v / c) for v, c in zip(sums, counts))
    return out


def choose_delta(targets, labeled_l, min_avg_neighbors: float = DEFAULT_MIN_NEIGHBORS) -> float:
    """Smallest delta at which targets average at least ``min_avg_neighbors``
    labelled neighbours (strict ``d < delta``).  If even the whole labelled set
    is too small, the delta that includes all of it is returned."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    labeled_l = np.atleast_2d(np.asarray(labeled_l, dtype=np.float64))
    d = np.sort(_pairwise(targets, labeled_l).reshape(-1))
    need = int(math.ceil(min_avg_neighbors * len(targets)))
    pick = d[min(max(need, 1), len(d)) - 1]
    # the next representable value makes ``pick`` itself count under d < delta
    return float(np.nextafter(max(pick, 0.0), np.inf))


# -- Exploited Level: learned regressor ------------------------------------------------------

class InsufficientLabelsError(ValueError):
    pass


@dataclass
class ELEstimator:
    """Two-layer perceptron on standardised representations.

    Targets are standardised too; ``predict_raw`` undoes both scalings.
    """

    params: ParamStore
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: float
    out_scale: float
    loss_history: list[float]

    def predict_raw(self, l) -> np.ndarray:
        x = (np.atleast_2d(np.asarray(l, dtype=np.float64)) - self.in_mean) / self.in_scale
        p = self.params
        hidden = np.tanh(x @ p["w1"].data + p["b1"].data)
        y = hidden @ p["w2"].data + p["b2"].data
        return y[:, 0] * self.out_scale + self.out_mean


def el_targets(rewards) -> tuple[np.ndarray, np.ndarray]:
    """(mask of losing trajectories, loss magnitude (-r)^+) for the regressor."""
    r = np.asarray(rewards, dtype=np.float64)
    return r <= 0, np.maximum(-r, 0.0)


def train_el_estimator(
    labeled_l,
    rewards,
    seed: int = 0,
    steps: int = 500,
    lr: float = 1e-3,
    hidden: int = 32,
    min_losing: int = MIN_LOSING_LABELS,
) -> ELEstimator:
    """Least-squares fit of (-r)^+ on the representations of losing labelled
    trajectories; full-batch Adam."""
    labeled_l = np.atleast_2d(np.asarray(labeled_l, dtype=np.float64))
    lose, target = el_targets(rewards)
    if lose.sum() < min_losing:
        raise InsufficientLabelsError(
            f"only {int(lose.sum())} losing labelled trajectories (need >= {min_losing}); the EL estimator would be unreliable"
        )
    x, y = labeled_l[lose], target[lose]
    in_mean = x.mean(axis=0)
    in_scale = x.std(axis=0)
    in_scale = np.where(in_scale > 1e-12, in_scale, 1.0)
    out_mean = float(y.mean())
    out_scale = float(y.std())
    if out_scale <= 1e-8 * max(1.0, abs(out_mean)):
        # constant targets: measure residuals relative to the constant itself
        out_scale = abs(out_mean) if out_mean != 0 else 1.0
    xs = (x - in_mean) / in_scale
    ys = (y - out_mean) / out_scale
    d = x.shape[1]
    b1 = math.sqrt(6.0 / (d + hidden))
    b2 = math.sqrt(6.0 / (hidden + 1))
    params = ParamStore(
        {
            "w1": make_rng(seed, "el", "w1").uniform(-b1, b1, (d, hidden)),
            "b1": np.zeros(hidden),
            "w2": make_rng(seed, "el", "w2").uniform(-b2, b2, (hidden, 1)),
            "b2": np.zeros(1),
        }
    )
    opt = AdamState.for_params(params, lr)
    xt = Tensor(xs)
    history = []
    for _ in range(steps):
        h = tn.tanh(xt @ params["w1"] + params["b1"])
        pred = tn.reshape(h @ params["w2"] + params["b2"], (-1,))
        loss = tn.mean(tn.square(pred - ys))
        grads = forward_backward(loss, params)
        adam_step(params, grads, opt)
        history.append(float(loss.data))
    return ELEstimator(params, in_mean, in_scale, out_mean, out_scale, history)


def estimate_el(estimator: ELEstimator, l) -> float | np.ndarray:
    """Regressor output clamped at 0 from below."""
    raw = np.maximum(estimator.predict_raw(l), 0.0)
    return float(raw[0]) if np.ndim(l) == 1 else raw


# -- records and filtering -------------------------------------------------------------------

FIELDS = {"ri": "ri", "el": "el_estimate", "el_estimate": "el_estimate", "el_delta": "el_delta"}


@dataclass
class IndicatorRecord:
    traj_id: str
    ri: float
    el_delta: float | None = None
    el_estimate: float | None = None
    reward: float | None = None

    @property
    def labeled(self) -> bool:
        return self.reward is not None


def percentile_filter(records: Sequence[IndicatorRecord], field: str, p: float) -> set[str]:
    """Ids whose indicator lies strictly below the empirical p-quantile
    (linear interpolation); p = 1 keeps everything."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if field not in FIELDS:
        raise KeyError(f"unknown indicator field {field!r}; choose from {sorted(FIELDS)}")
    attr = FIELDS[field]
    values = []
    for r in records:
        v = getattr(r, attr)
        if v is None:
            raise ValueError(f"record {r.traj_id} has no {attr} value")
        values.append(float(v))
    if not records:
        return set()
    if p == 1.0:
        return {r.traj_id for r in records}
    threshold = float(np.quantile(np.asarray(values), p))
    return {r.traj_id for r, v in zip(records, values) if v < threshold}


CSV_COLUMNS = ("traj_id", "ri", "el_delta", "el_estimate", "reward", "labeled")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_indicator_csv(path: str | Path, records: Iterable[IndicatorRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.traj_id, _fmt(r.ri), _fmt(r.el_delta), _fmt(r.el_estimate), _fmt(r.reward), int(r.labeled)])


def read_indicator_csv(path: str | Path) -> list[IndicatorRecord]:
    def opt(s):
        return None if s == "" else float(s)

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(CSV_COLUMNS):
        raise ValueError(f"{path}: expected columns {CSV_COLUMNS}")
    return [
        IndicatorRecord(r["traj_id"], float(r["ri"]), opt(r["el_delta"]), opt(r["el_estimate"]), opt(r["reward"]))
        for r in rows
    ]


def compute_records(
    model: PVRNNModel,
    trajs,
    reps: np.ndarray,
    seed: int = 0,
    delta: float | None = None,
    min_neighbors: float = DEFAULT_MIN_NEIGHBORS,
    el_steps: int = 500,
) -> tuple[list[IndicatorRecord], float, ELEstimator | None]:
    """RI, EL_delta and the regressor estimate for every trajectory.

    Labels are read only from ``trajectory.reward``; unlabelled rewards are
    ``None``.  Returns (records, delta used, estimator or None when too few
    losing labels exist).
    """
    trajs = list(trajs)
    reps = np.asarray(reps, dtype=np.float64)
    ri = randomness_indicators(model, trajs, reps, seed=seed)
    lab = np.array([t.reward is not None for t in trajs])
    rewards = np.array([t.reward for t in trajs if t.reward is not None], dtype=np.float64)
    lab_l = reps[lab]
    el_d: list[float | None] = [None] * len(trajs)
    est_vals: Sequence[float | None] = [None] * len(trajs)
    estimator = None
    if lab.any():
        if delta is None:
            delta = choose_delta(reps, lab_l, min_neighbors)
        el_d = el_delta_many(reps, lab_l, rewards, delta)
        try:
            estimator = train_el_estimator(lab_l, rewards, seed=seed, steps=el_steps)
            est_vals = list(estimate_el(estimator, reps))
        except InsufficientLabelsError:
            estimator = None
    records = [
        IndicatorRecord(t.id, float(ri[k]), el_d[k], None if est_vals[k] is None else float(est_vals[k]), t.reward)
        for k, t in enumerate(trajs)
    ]
    return records, (float("nan") if delta is None else float(delta)), estimator
