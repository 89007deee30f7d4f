"""Behaviour cloning on a (filtered) dataset and worst-score evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .demonstrators import _legal_from_obs
from .games import GameSpec, play_episode
from .numkit import AdamState, ParamStore, Tensor, adam_step, forward_backward, make_rng, sample_index
from .numkit import ops as tn
from .numkit.checkpoint import read_checkpoint, write_checkpoint

HIDDEN = 256


@dataclass(frozen=True)
class BCConfig:
    lr: float = 1e-4
    epochs: int = 500
    minibatches: int = 50
    hidden: int = HIDDEN
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.minibatches < 1 or self.hidden < 1:
            raise ValueError("epochs, minibatches and hidden must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


def _forward(params, x) -> Tensor:
    h = tn.relu(x @ params["l1/w"] + params["l1/b"])
    h = tn.relu(h @ params["l2/w"] + params["l2/b"])
    return h @ params["out/w"] + params["out/b"]


@dataclass
class BCPolicy:
    """obs -> 256 -> 256 -> action logits (ReLU); samples are masked to legal actions."""

    spec: GameSpec
    params: ParamStore
    name: str = "BC"
    loss_history: list[float] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def logits(self, obs) -> np.ndarray:
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        frozen = {k: Tensor(self.params[k].data) for k in self.params}
        return _forward(frozen, Tensor(x)).data

    def probs(self, obs, legal_mask) -> np.ndarray:
        key = np.asarray(obs, dtype=np.float64).tobytes() + np.asarray(legal_mask, dtype=bool).tobytes()
        hit = self._cache.get(key)
        if hit is None:
            z = self.logits(obs)[0]
            z = np.where(legal_mask, z, -np.inf)
            e = np.exp(z - z.max())
            hit = e / e.sum()
            self._cache[key] = hit
        return hit

    def act(self, obs, legal_mask, rng) -> int:
        return sample_index(self.probs(obs, legal_mask), rng)


def init_policy(spec: GameSpec, config: BCConfig) -> BCPolicy:
    params = ParamStore()
    sizes = {"l1": (spec.obs_dim, config.hidden), "l2": (config.hidden, config.hidden), "out": (config.hidden, spec.action_count)}
    for name, (fi, fo) in sizes.items():
        bound = math.sqrt(6.0 / (fi + fo))
        params[f"{name}/w"] = make_rng(config.seed, "bc-init", name).uniform(-bound, bound, (fi, fo))
        params[f"{name}/b"] = np.zeros(fo)
    return BCPolicy(spec, params)


def bc_train(dataset, kept_ids, config: BCConfig = BCConfig(), name: str = "BC") -> BCPolicy:
    """Minimise mean NLL of recorded actions over the kept trajectories.

    Every epoch shuffles all kept (obs, action) steps and splits them into
    ``config.minibatches`` minibatches.  Identical (obs, action) pairs inside
    a minibatch are merged into one weighted row, which leaves the loss and
    its gradient unchanged.
    """
    kept = set(kept_ids)
    if not kept:
        raise ValueError("kept_ids is empty: nothing to imitate")
    unknown = kept - {t.id for t in dataset.trajectories}
    if unknown:
        raise KeyError(f"{len(unknown)} kept ids are not in the dataset, e.g. {sorted(unknown)[0]}")
    trajs = [t for t in dataset.trajectories if t.id in kept]
    obs = np.concatenate([t.observations for t in trajs])
    acts = np.concatenate([t.actions for t in trajs])
    uniq, obs_id = np.unique(obs, axis=0, return_inverse=True)
    obs_id = obs_id.reshape(-1)
    n_act = dataset.spec.action_count
    policy = init_policy(dataset.spec, config)
    policy.name = name
    opt = AdamState.for_params(policy.params, config.lr)
    n = len(acts)
    for epoch in range(config.epochs):
        order = make_rng(config.seed, "bc-shuffle", epoch).permutation(n)
        total = 0.0
        for chunk in np.array_split(order, config.minibatches):
            if len(chunk) == 0:
                continue
            keys = obs_id[chunk] * n_act + acts[chunk]
            ukeys, counts = np.unique(keys, return_counts=True)
            rows, targets = ukeys // n_act, ukeys % n_act
            logp = tn.log_softmax(_forward(policy.params, Tensor(uniq[rows])), axis=1)
            weighted = tn.pick(logp, targets) * (counts / len(chunk))
            loss = -tn.tsum(weighted)
            grads = forward_backward(loss, policy.params)
            adam_step(policy.params, grads, opt)
            total += float(loss.data) * len(chunk)
        policy.loss_history.append(total / n)
    return policy


def save_policy(path, policy: BCPolicy) -> None:
    arrays = dict(policy.params.arrays())
    arrays["meta/obs_dim"] = np.array(float(policy.spec.obs_dim))
    arrays["meta/action_count"] = np.array(float(policy.spec.action_count))
    arrays["meta/max_steps"] = np.array(float(policy.spec.max_steps))
    arrays["meta/loss_history"] = np.asarray(policy.loss_history, dtype=np.float64)
    write_checkpoint(path, arrays)


def load_policy(path, game_name: str, name: str = "BC") -> BCPolicy:
    arrays = read_checkpoint(path)
    spec = GameSpec(
        game_name,
        int(arrays.pop("meta/obs_dim")),
        int(arrays.pop("meta/action_count")),
        int(arrays.pop("meta/max_steps")),
    )
    history = arrays.pop("meta/loss_history").tolist()
    return BCPolicy(spec, ParamStore(arrays), name, history)


# -- evaluation -------------------------------------------------------------------------

@dataclass
class EvalReport:
    per_opponent: dict[str, float]
    worst_score: float
    n_games: int
    policy: str = "BC"

    def to_rows(self) -> list[tuple[str, str, float]]:
        rows = [(self.policy, opp, v) for opp, v in self.per_opponent.items()]
        rows.append((self.policy, "WORST", self.worst_score))
        return rows

    def table(self) -> str:
        width = max(len(k) for k in [*self.per_opponent, "worst score"])
        lines = [f"{self.policy} ({self.n_games} games per opponent)"]
        lines += [f"  {k:<{width}}  {v:+.4f}" for k, v in self.per_opponent.items()]
        lines.append(f"  {'worst score':<{width}}  {self.worst_score:+.4f}")
        return "\n".join(lines)


def worst_score(policy, demonstrators: Sequence, game, n_games: int, seed: int) -> EvalReport:
    """Mean per-episode score of ``policy`` against each demonstrator.

    The policy alternates seats: even-numbered games it moves first, odd
    ones second.  Game ``g`` against demonstrator ``j`` uses the stream
    ``(seed, "eval", j, g)``.
    """
    if n_games < 1:
        raise ValueError("n_games must be >= 1")
    per: dict[str, float] = {}
    for j, demo in enumerate(demonstrators):
        tot = 0.0
        for g in range(n_games):
            rng = make_rng(seed, "eval", j, g)
            if g % 2 == 0:
                mine, _ = play_episode(game, policy, demo, rng)
            else:
                _, mine = play_episode(game, demo, policy, rng)
            tot += game.episode_score(mine.reward, len(mine))
        per[demo.name] = tot / n_games
    return EvalReport(per, min(per.values()), n_games, getattr(policy, "name", "policy"))


def write_eval_csv(path: str | Path, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "opponent", "mean_score", "n_games"])
        for rep in reports:
            for pol, opp, v in rep.to_rows():
                w.writerow([pol, opp, repr(float(v)), rep.n_games])


def legal_mask_for(spec: GameSpec, obs) -> np.ndarray:
    return _legal_from_obs(spec, np.asarray(obs))
