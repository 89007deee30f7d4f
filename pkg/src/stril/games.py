"""Two-player zero-sum games: repeated Rock-Paper-Scissors, Connect Four, and
normal-form analysis (best response, exploitability)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .trajectory import Trajectory

ROCK, PAPER, SCISSORS = 0, 1, 2
RPS_ACTIONS = ("rock", "paper", "scissors")

C4_ROWS, C4_COLS = 6, 7


class IllegalActionError(ValueError):
    pass


class GameOverError(RuntimeError):
    pass


@dataclass(frozen=True)
class GameSpec:
    name: str
    obs_dim: int
    action_count: int
    max_steps: int

    def __post_init__(self):
        if self.action_count < 2:
            raise ValueError("a game needs at least two actions")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def to_dict(self) -> dict:
        return {"name": self.name, "obs_dim": self.obs_dim, "action_count": self.action_count, "max_steps": self.max_steps}


class Policy(Protocol):
    name: str

    def act(self, obs: np.ndarray, legal_mask: np.ndarray, rng: np.random.Generator) -> int: ...


# -- Rock-Paper-Scissors -----------------------------------------------------------

def rps_payoff(a1: int, a2: int) -> float:
    """+1 if ``a1`` beats ``a2``, -1 if it loses, 0 on a draw."""
    return float((((a1 - a2) % 3) + 1) % 3 - 1)


@dataclass(frozen=True)
class RPSState:
    last_action_p1: int | None = None
    last_action_p2: int | None = None
    round: int = 0
    horizon: int = 100


def rps_step(state: RPSState, a1: int, a2: int) -> tuple[RPSState, float]:
    if state.round >= state.horizon:
        raise GameOverError(f"RPS episode already finished after {state.horizon} rounds")
    for a in (a1, a2):
        if a not in (ROCK, PAPER, SCISSORS):
            raise IllegalActionError(f"RPS action must be 0, 1 or 2, got {a}")
    return replace(state, last_action_p1=a1, last_action_p2=a2, round=state.round + 1), rps_payoff(a1, a2)


class RepeatedRPS:
    """RPS repeated for ``horizon`` rounds; each seat sees the opponent's previous
    action as a one-hot vector (all zeros in round 0)."""

    def __init__(self, horizon: int = 100):
        self.spec = GameSpec("rps", 3, 3, horizon)

    def initial_state(self) -> RPSState:
        return RPSState(horizon=self.spec.max_steps)

    def to_move(self, state: RPSState) -> tuple[int, ...]:
        return () if state.round >= state.horizon else (0, 1)

    def observe(self, state: RPSState, seat: int) -> np.ndarray:
        obs = np.zeros(3)
        last = state.last_action_p2 if seat == 0 else state.last_action_p1
        if last is not None:
            obs[last] = 1.0
        return obs

    def legal_mask(self, state: RPSState, seat: int) -> np.ndarray:
        return np.ones(3, dtype=bool)

    def apply(self, state: RPSState, actions: dict[int, int]):
        nxt, r = rps_step(state, actions[0], actions[1])
        return nxt, (r, -r), nxt.round >= nxt.horizon

    def episode_score(self, reward: float, n_steps: int) -> float:
        # every round is one game: (wins - losses) / games
        return reward / n_steps


# -- Connect Four ----------------------------------------------------------------------

@dataclass(frozen=True)
class C4State:
    """Board with row 0 at the bottom; cells hold 0 (empty), 1 or 2 (seat + 1).

    ``winner`` is ``None`` while the game runs, 0 for a draw, else the
    winning cell value.
    """

    grid: np.ndarray
    to_move: int = 0
    winner: int | None = None

    @classmethod
    def empty(cls) -> "C4State":
        grid = np.zeros((C4_ROWS, C4_COLS), dtype=np.int8)
        grid.setflags(write=False)
        return cls(grid)

    def heights(self) -> np.ndarray:
        return (self.grid != 0).sum(axis=0)


def _connects_four(grid: np.ndarray, row: int, col: int) -> bool:
    piece = grid[row, col]
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        run = 1
        for sign in (1, -1):
            r, c = row + sign * dr, col + sign * dc
            while 0 <= r < C4_ROWS and 0 <= c < C4_COLS and grid[r, c] == piece:
                run += 1
                r += sign * dr
                c += sign * dc
        if run >= 4:
            return True
    return False


def c4_step(state: C4State, column: int) -> tuple[C4State, bool, float]:
    """Drop the mover's token into ``column``; returns (state', terminal, reward to mover)."""
    if state.winner is not None:
        raise GameOverError("Connect Four game is already over")
    if not 0 <= column < C4_COLS:
        raise IllegalActionError(f"column {column} out of range")
    height = int(np.count_nonzero(state.grid[:, column]))
    if height >= C4_ROWS:
        raise IllegalActionError(f"column {column} is full")
    grid = state.grid.copy()
    piece = state.to_move + 1
    grid[height, column] = piece
    grid.setflags(write=False)
    if _connects_four(grid, height, column):
        return C4State(grid, 1 - state.to_move, piece), True, 1.0
    if np.all(grid != 0):
        return C4State(grid, 1 - state.to_move, 0), True, 0.0
    return C4State(grid, 1 - state.to_move, None), False, 0.0


def c4_observation(grid: np.ndarray, seat: int) -> np.ndarray:
    """84-vector: the seat's own tokens (42 cells, row-major from the bottom)
    followed by the opponent's tokens."""
    own = (grid == seat + 1).astype(np.float64).reshape(-1)
    opp = (grid == 2 - seat).astype(np.float64).reshape(-1)
    return np.concatenate([own, opp])


def c4_grid_from_observation(obs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`c4_observation` from the observer's seat: own tokens as 1."""
    obs = np.asarray(obs)
    n = C4_ROWS * C4_COLS
    grid = obs[:n].reshape(C4_ROWS, C4_COLS).astype(np.int8) + 2 * obs[n:].reshape(C4_ROWS, C4_COLS).astype(np.int8)
    return grid


class ConnectFour:
    def __init__(self):
        self.spec = GameSpec("connect4", 2 * C4_ROWS * C4_COLS, C4_COLS, C4_ROWS * C4_COLS // 2)

    def initial_state(self) -> C4State:
        return C4State.empty()

    def to_move(self, state: C4State) -> tuple[int, ...]:
        return () if state.winner is not None else (state.to_move,)

    def observe(self, state: C4State, seat: int) -> np.ndarray:
        return c4_observation(state.grid, seat)

    def legal_mask(self, state: C4State, seat: int) -> np.ndarray:
        return state.grid[C4_ROWS - 1] == 0

    def apply(self, state: C4State, actions: dict[int, int]):
        mover = state.to_move
        nxt, terminal, r = c4_step(state, actions[mover])
        rewards = [0.0, 0.0]
        rewards[mover] = r
        rewards[1 - mover] = -r
        return nxt, tuple(rewards), terminal

    def episode_score(self, reward: float, n_steps: int) -> float:
        return reward


def make_game(name: str, horizon: int = 100):
    if name == "rps":
        return RepeatedRPS(horizon)
    if name in ("connect4", "c4"):
        return ConnectFour()
    raise KeyError(f"unknown game {name!r}")


def play_episode(
    game,
    policy_ego: Policy,
    policy_opp: Policy,
    rng: np.random.Generator,
    ids: tuple[str, str] = ("ego", "opp"),
) -> tuple[Trajectory, Trajectory]:
    """Run one episode; the ego policy takes seat 0 (first mover in Connect Four).

    Each trajectory only records its own seat's decision points; turns where
    a seat holds the null action are folded into its next observation.
    """
    policies = (policy_ego, policy_opp)
    obs: list[list[np.ndarray]] = [[], []]
    acts: list[list[int]] = [[], []]
    totals = [0.0, 0.0]
    state = game.initial_state()
    while True:
        movers = game.to_move(state)
        if not movers:
            break
        chosen = {}
        for seat in movers:
            o = game.observe(state, seat)
            mask = game.legal_mask(state, seat)
            a = int(policies[seat].act(o, mask, rng))
            if not (0 <= a < len(mask)) or not mask[a]:
                raise IllegalActionError(
                    f"policy {policies[seat].name!r} chose illegal action {a} at step {len(acts[seat])}"
                )
            obs[seat].append(o)
            acts[seat].append(a)
            chosen[seat] = a
        state, rewards, terminal = game.apply(state, chosen)
        totals[0] += rewards[0]
        totals[1] += rewards[1]
        if terminal:
            break
    trajs = tuple(
        Trajectory(ids[s], np.array(obs[s]), np.array(acts[s]), totals[s]) for s in (0, 1)
    )
    return trajs  # type: ignore[return-value]


# -- normal-form analysis ---------------------------------------------------------------

@dataclass(frozen=True)
class MatrixGame:
    """``payoff[i, j]`` is the row player's reward when playing pure ``i``
    against pure ``j``."""

    payoff: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.payoff, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("payoff must be a square matrix")
        object.__setattr__(self, "payoff", p)

    @property
    def n(self) -> int:
        return self.payoff.shape[0]

    def is_antisymmetric(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.payoff, -self.payoff.T, atol=tol))

    def reward(self, player: np.ndarray, opponent: np.ndarray) -> float:
        """Expected reward of mixed strategy ``player`` against ``opponent``."""
        return float(np.asarray(player) @ self.payoff @ np.asarray(opponent))


def rps_matrix() -> MatrixGame:
    return MatrixGame(np.array([[rps_payoff(i, j) for j in range(3)] for i in range(3)]))


def random_antisymmetric(n: int, rng: np.random.Generator) -> MatrixGame:
    upper = np.triu(rng.uniform(-1.0, 1.0, size=(n, n)), 1)
    return MatrixGame(upper - upper.T)


def check_simplex(sigma, n: int | None = None, tol: float = 1e-9) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 1 or (n is not None and len(s) != n):
        raise ValueError(f"strategy must be a vector of length {n}")
    if np.any(s < -tol) or abs(s.sum() - 1.0) > tol:
        raise ValueError(f"strategy {s.tolist()} is not on the probability simplex")
    return s


def best_response(game: MatrixGame, sigma: Sequence[float]) -> tuple[int, float]:
    """Pure best response to the opponent mixture ``sigma`` (lowest index on ties)."""
    s = check_simplex(sigma, game.n)
    values = game.payoff @ s
    idx = int(np.argmax(values))
    return idx, float(values[idx])


def exploitability(game: MatrixGame, sigma: Sequence[float]) -> float:
    """Best-response value against ``sigma``; for a symmetric zero-sum game
    this is how much an opponent can win from ``sigma``."""
    return best_response(game, sigma)[1]
