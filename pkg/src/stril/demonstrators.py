"""Scripted demonstrators of graded skill and the roster-level analyses
(cross-evaluation matrix, average strategy entropy)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .games import (
    C4_COLS,
    C4_ROWS,
    GameSpec,
    PAPER,
    ROCK,
    SCISSORS,
    c4_grid_from_observation,
    play_episode,
)
from .numkit import make_rng, sample_index


class PolicySpec:
    """Base for scripted policies.

    Subclasses implement :meth:`probs`, the exact action distribution at a
    state; :meth:`act` samples from it restricted to legal actions.
    """

    name: str

    def probs(self, obs: np.ndarray, legal_mask: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act(self, obs: np.ndarray, legal_mask: np.ndarray, rng: np.random.Generator) -> int:
        return sample_index(self.probs(obs, legal_mask), rng)


def _masked_uniform(legal_mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(legal_mask, dtype=np.float64)
    if mask.sum() == 0:
        raise ValueError("no legal actions")
    return mask / mask.sum()


def _restrict(p: np.ndarray, legal_mask: np.ndarray) -> np.ndarray:
    q = np.where(legal_mask, p, 0.0)
    total = q.sum()
    return q / total if total > 0 else _masked_uniform(legal_mask)


@dataclass(frozen=True)
class Uniform(PolicySpec):
    name: str = "Uniform"

    def probs(self, obs, legal_mask):
        return _masked_uniform(legal_mask)


@dataclass(frozen=True)
class Constant(PolicySpec):
    action: int = ROCK
    name: str = "Constant"

    def probs(self, obs, legal_mask):
        p = np.zeros(len(legal_mask))
        p[self.action] = 1.0
        return _restrict(p, legal_mask)


@dataclass(frozen=True)
class Mixed(PolicySpec):
    weights: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    name: str = "Mixed"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"Mixed weights {self.weights} are not on the simplex")

    def probs(self, obs, legal_mask):
        return _restrict(np.asarray(self.weights, dtype=np.float64), legal_mask)


_BEATS = {ROCK: PAPER, PAPER: SCISSORS, SCISSORS: ROCK}


@dataclass(frozen=True)
class CounterLast(PolicySpec):
    """Plays whatever beats the opponent's previous RPS action; rock in round 0."""

    name: str = "CounterLast"

    def probs(self, obs, legal_mask):
        p = np.zeros(len(legal_mask))
        obs = np.asarray(obs)
        if obs.sum() == 0:
            p[ROCK] = 1.0
        else:
            p[_BEATS[int(np.argmax(obs))]] = 1.0
        return _restrict(p, legal_mask)


# -- Connect Four search ------------------------------------------------------------------

def _c4_windows() -> np.ndarray:
    lines = []
    for r in range(C4_ROWS):
        for c in range(C4_COLS):
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                cells = [(r + k * dr, c + k * dc) for k in range(4)]
                if all(0 <= rr < C4_ROWS and 0 <= cc < C4_COLS for rr, cc in cells):
                    lines.append([rr * C4_COLS + cc for rr, cc in cells])
    return np.array(lines, dtype=np.int64)


WINDOWS = _c4_windows()


def open_three_balance(flat: np.ndarray, me: int) -> float:
    """(# windows with three of ``me`` and one empty) minus the same for the opponent."""
    cells = flat[WINDOWS]
    empty = (cells == 0).sum(axis=1) == 1
    mine = (cells == me).sum(axis=1) == 3
    theirs = (cells == 3 - me).sum(axis=1) == 3
    return float(np.count_nonzero(empty & mine) - np.count_nonzero(empty & theirs))


def _wins_at(flat: np.ndarray, row: int, col: int, piece: int) -> bool:
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        run = 1
        for sign in (1, -1):
            r, c = row + sign * dr, col + sign * dc
            while 0 <= r < C4_ROWS and 0 <= c < C4_COLS and flat[r * C4_COLS + c] == piece:
                run += 1
                r += sign * dr
                c += sign * dc
        if run >= 4:
            return True
    return False


def _negamax(flat: np.ndarray, heights: np.ndarray, me: int, depth: int, alpha: float, beta: float) -> float:
    if depth == 0:
        return open_three_balance(flat, me)
    legal = [c for c in range(C4_COLS) if heights[c] < C4_ROWS]
    if not legal:
        return 0.0
    value = -math.inf
    for c in legal:
        r = heights[c]
        idx = r * C4_COLS + c
        flat[idx] = me
        heights[c] += 1
        if _wins_at(flat, r, c, me):
            score = math.inf
        else:
            score = -_negamax(flat, heights, 3 - me, depth - 1, -beta, -alpha)
        heights[c] -= 1
        flat[idx] = 0
        if score > value:
            value = score
        if value > alpha:
            alpha = value
        if alpha >= beta:
            break
    return value


def minimax_scores(grid: np.ndarray, depth: int) -> np.ndarray:
    """Depth-limited negamax value of each column for the player owning the
    1-tokens in ``grid``; illegal columns score NaN."""
    flat = np.asarray(grid, dtype=np.int8).reshape(-1).copy()
    heights = (np.asarray(grid) != 0).sum(axis=0).astype(np.int64)
    scores = np.full(C4_COLS, np.nan)
    for c in range(C4_COLS):
        if heights[c] >= C4_ROWS:
            continue
        r = heights[c]
        flat[r * C4_COLS + c] = 1
        heights[c] += 1
        if _wins_at(flat, r, c, 1):
            scores[c] = math.inf
        else:
            scores[c] = -_negamax(flat, heights, 2, depth - 1, -math.inf, math.inf)
        heights[c] -= 1
        flat[r * C4_COLS + c] = 0
    return scores


def minimax_action(grid: np.ndarray, depth: int) -> int:
    scores = minimax_scores(grid, depth)
    legal = ~np.isnan(scores)
    best = np.max(scores[legal])
    return int(np.flatnonzero(legal & (scores == best))[0])


@dataclass(frozen=True)
class EpsilonMinimax(PolicySpec):
    """With probability ``epsilon`` a uniformly random legal column, otherwise
    the depth-limited minimax choice (lowest column on ties)."""

    depth: int = 2
    epsilon: float = 0.1
    name: str = "EpsilonMinimax"
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    def greedy(self, obs: np.ndarray) -> int:
        key = np.asarray(obs, dtype=np.int8).tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = minimax_action(c4_grid_from_observation(obs), self.depth)
            if len(self._cache) < 200_000:
                self._cache[key] = hit
        return hit

    def probs(self, obs, legal_mask):
        p = self.epsilon * _masked_uniform(legal_mask)
        p[self.greedy(obs)] += 1.0 - self.epsilon
        return p

    def act(self, obs, legal_mask, rng):
        if rng.random() < self.epsilon:
            return int(rng.choice(np.flatnonzero(legal_mask)))
        return self.greedy(obs)


def act(policy: PolicySpec, obs, legal_mask, rng) -> int:
    return policy.act(np.asarray(obs), np.asarray(legal_mask, dtype=bool), rng)


# -- rosters -------------------------------------------------------------------------------

def rps_roster() -> list[PolicySpec]:
    return [
        Uniform(name="Nash"),
        Mixed((0.0, 2 / 3, 1 / 3), name="PaperScissors"),
        Constant(ROCK, name="Rock"),
        CounterLast(name="CounterLast"),
        Mixed((0.5, 0.3, 0.2), name="RockHeavy"),
    ]


def c4_roster() -> list[PolicySpec]:
    levels = [(1, 0.5), (2, 0.3), (3, 0.1), (4, 0.02)]
    return [EpsilonMinimax(d, e, name=f"Minimax-d{d}-e{e:g}") for d, e in levels] + [Uniform(name="Random")]


def default_roster(game_name: str) -> list[PolicySpec]:
    return rps_roster() if game_name == "rps" else c4_roster()


# -- analyses ------------------------------------------------------------------------------

@dataclass
class CrossEvalMatrix:
    names: list[str]
    scores: np.ndarray
    n_games: int

    def to_csv(self, path: str | Path) -> None:
        write_matrix_csv(path, self.names, self.scores)


def write_matrix_csv(path: str | Path, names: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["", *names])
        for name, row in zip(names, matrix):
            w.writerow([name, *[repr(float(x)) for x in row]])


def cross_evaluate(policies: Sequence[PolicySpec], game, n_games: int, seed: int) -> CrossEvalMatrix:
    """Mean per-episode score of the row policy (seat 0) against the column policy.

    Episode ``g`` of pair ``(i, j)`` draws from the stream ``(seed, i, j, g)``.
    """
    if len(policies) < 2:
        raise ValueError("cross-evaluation needs at least two policies")
    n = len(policies)
    scores = np.zeros((n, n))
    for i, pi in enumerate(policies):
        for j, pj in enumerate(policies):
            tot = 0.0
            for g in range(n_games):
                ego, _ = play_episode(game, pi, pj, make_rng(seed, i, j, g))
                tot += game.episode_score(ego.reward, len(ego))
            scores[i, j] = tot / n_games
    return CrossEvalMatrix([p.name for p in policies], scores, n_games)


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def strategy_entropy(
    policy: PolicySpec, game, n_trajectories: int, seed: int, opponent: PolicySpec | None = None
) -> float:
    """Average over sampled trajectories of the mean per-step entropy of the
    policy's exact action distribution at the visited states."""
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    opponent = opponent or Uniform()
    total = 0.0
    for k in range(n_trajectories):
        rng = make_rng(seed, k)
        ego, _ = play_episode(game, policy, opponent, rng)
        state_h = []
        for obs in ego.observations:
            mask = _legal_from_obs(game.spec, obs)
            state_h.append(_entropy(policy.probs(obs, mask)))
        total += float(np.mean(state_h))
    return total / n_trajectories


def _legal_from_obs(spec: GameSpec, obs: np.ndarray) -> np.ndarray:
    if spec.name == "connect4":
        top = C4_ROWS - 1
        n = C4_ROWS * C4_COLS
        occupied = obs[top * C4_COLS : (top + 1) * C4_COLS] + obs[n + top * C4_COLS : n + (top + 1) * C4_COLS]
        return occupied == 0
    return np.ones(spec.action_count, dtype=bool)


def write_entropy_csv(path: str | Path, names: Sequence[str], values: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "entropy"])
        for n, v in zip(names, values):
            w.writerow([n, repr(float(v))])
