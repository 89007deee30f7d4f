"""Numerical checks of the Exploited Level geometry on matrix games.

Opponents are drawn uniformly from the probability simplex.  The checks
cover the closed-form EL identity for a strategy with a single exploiting
pure response, the convexity inequality for mixtures (expected
exploitability against exploitability of the mean strategy), and the
near-Nash bound on the neighbourhood estimate EL_delta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .games import MatrixGame, check_simplex, exploitability, random_antisymmetric, rps_matrix
from .indicators import el_delta
from .numkit import make_rng

_CHUNK = 200_000


class SimplexSampler:
    """Uniform points on the standard (n-1)-simplex via normalised exponential spacings."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 2:
            raise ValueError("simplex dimension must be at least 2")
        self.n = n
        self.rng = rng

    def sample(self, k: int) -> np.ndarray:
        e = self.rng.standard_exponential((k, self.n))
        return e / e.sum(axis=1, keepdims=True)


class MCEstimate(NamedTuple):
    value: float
    se: float
    n_losing: int
    n_samples: int


def _sigma_payoff_row(game: MatrixGame, sigma: np.ndarray) -> np.ndarray:
    # reward of sigma against each pure opponent
    return sigma @ game.payoff


def monte_carlo_el(game: MatrixGame, sigma, n_samples: int, rng: np.random.Generator) -> MCEstimate | None:
    """Mean of (-r)^+ over uniform-simplex opponents with r(sigma, opponent) <= 0.

    Samples with r = 0 count in the denominator with zero loss.  Returns
    ``None`` when no sampled opponent beats or ties ``sigma``.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    s = check_simplex(sigma, game.n)
    c = _sigma_payoff_row(game, s)
    sampler = SimplexSampler(game.n, rng)
    total = total_sq = 0.0
    count = 0
    done = 0
    while done < n_samples:
        k = min(_CHUNK, n_samples - done)
        r = sampler.sample(k) @ c
        lose = r <= 0
        loss = -r[lose]
        total += float(loss.sum())
        total_sq += float((loss * loss).sum())
        count += int(lose.sum())
        done += k
    if count == 0:
        return None
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / max(count - 1, 1)
    return MCEstimate(mean, float(np.sqrt(var / count)), count, n_samples)


def exploiting_responses(game: MatrixGame, sigma) -> np.ndarray:
    """Indices of pure strategies that beat ``sigma`` in expectation."""
    s = check_simplex(sigma, game.n)
    return np.flatnonzero(_sigma_payoff_row(game, s) < 0)


@dataclass
class IdentityCheck:
    lhs: float | None
    rhs: float | None
    se: float | None
    passed: bool
    precondition_ok: bool
    vertex_mean: float | None = None
    message: str = ""


def check_el_identity(game: MatrixGame, sigma, n_samples: int, rng: np.random.Generator) -> IdentityCheck:
    """Compare the Monte Carlo EL with exploitability / (n + 1).

    ``vertex_mean`` reports exploitability / n, the average loss over the
    vertices of the losing region.  The losing region is itself a simplex
    when exactly one pure response exploits ``sigma``, so that average is
    the exact mean of the (linear) loss over it.
    """
    s = check_simplex(sigma, game.n)
    exploiters = exploiting_responses(game, s)
    if len(exploiters) != 1:
        return IdentityCheck(
            None, None, None, False, False,
            message=f"precondition violated: {len(exploiters)} pure strategies exploit sigma (need exactly 1)",
        )
    e = exploitability(game, s)
    est = monte_carlo_el(game, s, n_samples, rng)
    rhs = e / (game.n + 1)
    if est is None:
        return IdentityCheck(None, rhs, None, False, True, e / game.n, "no losing samples")
    passed = abs(est.value - rhs) < 3 * est.se
    return IdentityCheck(est.value, rhs, est.se, passed, True, e / game.n,
                         "" if passed else f"|lhs - rhs| = {abs(est.value - rhs):.3g} exceeds 3 SE = {3 * est.se:.3g}")


class Prop1Check(NamedTuple):
    mixture_E: float
    expected_E: float
    passed: bool


def check_prop1(game: MatrixGame, strategies, weights) -> Prop1Check:
    """sum_i w_i E(pi_i) >= E(sum_i w_i pi_i) for a finite mixture."""
    w = check_simplex(weights)
    strategies = np.atleast_2d(np.asarray(strategies, dtype=np.float64))
    if len(strategies) != len(w):
        raise ValueError("one weight per strategy is required")
    expected = float(sum(wi * exploitability(game, si) for wi, si in zip(w, strategies)))
    mixture = exploitability(game, w @ strategies)
    return Prop1Check(mixture, expected, expected >= mixture - 1e-9)


@dataclass(frozen=True)
class Prop2Params:
    epsilon1: float
    alpha: float
    M: float
    delta: float

    def __post_init__(self):
        for k in ("epsilon1", "alpha", "M", "delta"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")

    @property
    def bound(self) -> float:
        return self.epsilon1 + self.alpha * self.delta * self.M


def simplex_fixture(game: MatrixGame, n_samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic labelled set: representation = the strategy's own simplex
    coordinates, reward = expected reward against a uniform-simplex opponent."""
    sampler = SimplexSampler(game.n, rng)
    reps = sampler.sample(n_samples)
    opps = sampler.sample(n_samples)
    rewards = np.einsum("ki,ij,kj->k", reps, game.payoff, opps)
    return reps, rewards


class Prop2Check(NamedTuple):
    el_delta: float | None
    bound: float
    passed: bool
    message: str


def check_prop2(game: MatrixGame, sigma, reps, rewards, params: Prop2Params) -> Prop2Check:
    """EL_delta(sigma) < epsilon1 + alpha * delta * M on an identity-map fixture."""
    s = check_simplex(sigma, game.n)
    e = exploitability(game, s)
    if e > params.epsilon1 + 1e-12:
        return Prop2Check(None, params.bound, False, f"precondition violated: exploitability {e:.6g} > epsilon1 {params.epsilon1:.6g}")
    value = el_delta(s, reps, rewards, params.delta)
    if value is None:
        return Prop2Check(None, params.bound, False, "no losing labelled neighbours within delta")
    ok = value < params.bound
    return Prop2Check(value, params.bound, ok, "" if ok else f"EL_delta {value:.6g} >= bound {params.bound:.6g}")


# -- report -------------------------------------------------------------------------

class ReportRow(NamedTuple):
    check: str
    case: str
    lhs: float | None
    rhs: float | None
    passed: bool
    note: str


def verify_all(seed: int = 0, n_samples: int = 1_000_000, fixture_samples: int = 1_000_000) -> list[ReportRow]:
    g = rps_matrix()
    rows: list[ReportRow] = []
    for label, sigma in (("(0,2/3,1/3)", (0.0, 2 / 3, 1 / 3)), ("rock", (1.0, 0.0, 0.0))):
        res = check_el_identity(g, sigma, n_samples, make_rng(seed, "identity", label))
        note = f"se={res.se:.3g}; E/n={res.vertex_mean:.6g}" if res.se is not None else res.message
        rows.append(ReportRow("el_identity", label, res.lhs, res.rhs, res.passed, note))
    two = check_el_identity(g, (0.5, 0.1, 0.4), 1000, make_rng(seed, "identity", "guard"))
    rows.append(ReportRow("el_identity", "(0.5,0.1,0.4) guard", None, None, not two.precondition_ok, two.message))

    rng = make_rng(seed, "prop1")
    worst = np.inf
    for _ in range(100):
        game = random_antisymmetric(4, rng)
        k = int(rng.integers(1, 5))
        res = check_prop1(game, rng.dirichlet(np.ones(4), size=k), rng.dirichlet(np.ones(k)))
        worst = min(worst, res.expected_E - res.mixture_E)
    rows.append(ReportRow("prop1", "100 random 4x4 games", worst, -1e-9, worst >= -1e-9, "min slack"))

    reps, rewards = simplex_fixture(g, fixture_samples, make_rng(seed, "fixture"))
    for label, sigma, eps1 in (("nash", (1 / 3, 1 / 3, 1 / 3), 0.0), ("(0.35,0.35,0.30)", (0.35, 0.35, 0.30), 0.05)):
        for delta in (0.2, 0.1, 0.05):
            res = check_prop2(g, sigma, reps, rewards, Prop2Params(eps1, 1.0, 1.0, delta))
            rows.append(ReportRow("prop2", f"{label} delta={delta}", res.el_delta, res.bound, res.passed, res.message))
    for delta in (0.2, 0.1, 0.05):
        value = el_delta((0.0, 2 / 3, 1 / 3), reps, rewards, delta)
        ok = value is not None and abs(value - 1 / 6) < 0.03
        rows.append(ReportRow("el_delta_limit", f"(0,2/3,1/3) delta={delta}", value, 1 / 6, ok, "target 1/6 +- 0.03"))
    return rows


def write_report_csv(path: str | Path, rows: Sequence[ReportRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ReportRow._fields)
        for r in rows:
            w.writerow([r.check, r.case, "" if r.lhs is None else repr(float(r.lhs)),
                        "" if r.rhs is None else repr(float(r.rhs)), int(r.passed), r.note])


def format_report(rows: Sequence[ReportRow]) -> str:
    lines = []
    for r in rows:
        lhs = "-" if r.lhs is None else f"{r.lhs:.6g}"
        rhs = "-" if r.rhs is None else f"{r.rhs:.6g}"
        lines.append(f"[{'PASS' if r.passed else 'FAIL'}] {r.check:<15} {r.case:<28} lhs={lhs:<12} rhs={rhs:<12} {r.note}")
    return "\n".join(lines)
