import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stril.games import MatrixGame, exploitability, random_antisymmetric, rps_matrix
from stril.numkit import make_rng
from .oracles import centroids, triangle_quadrature_el
from stril.toymodel import (
    Prop2Params,
    SimplexSampler,
    check_el_identity,
    check_prop1,
    check_prop2,
    exploiting_responses,
    format_report,
    monte_carlo_el,
    simplex_fixture,
    verify_all,
    write_report_csv,
)


def test_quadrature_points_reproduce_simplex_moments():
    pts = centroids(50)
    assert len(pts) == 2500 and np.allclose(pts.sum(axis=1), 1.0)
    # uniform simplex: E[x_i] = 1/3, E[x_i^2] = 1/6 (centroid rule error is O(1/n^2))
    assert np.allclose(pts.mean(axis=0), 1 / 3, atol=1e-12)
    assert np.allclose((pts**2).mean(axis=0), 1 / 6, atol=1e-4)


def test_sampler_on_simplex_with_uniform_moments():
    x = SimplexSampler(4, make_rng(0)).sample(200_000)
    assert np.all(x >= 0) and np.all(np.abs(x.sum(axis=1) - 1) < 1e-12)
    se = x.std(axis=0) / np.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0) - 0.25) < 3 * se)


def test_sampler_is_uniform_in_area():
    # P(x_0 > 1/2) is the area of the corner triangle: (1/2)^2
    x = SimplexSampler(3, make_rng(1)).sample(200_000)
    frac = (x[:, 0] > 0.5).mean()
    assert abs(frac - 0.25) < 3 * np.sqrt(0.25 * 0.75 / len(x))


def test_mc_el_matches_quadrature_worked_example():
    g = rps_matrix()
    sigma = (0.0, 2 / 3, 1 / 3)
    est = monte_carlo_el(g, sigma, 400_000, make_rng(2))
    oracle = triangle_quadrature_el(g.payoff, sigma)
    assert oracle == pytest.approx(2 / 9, abs=2e-3)
    assert abs(est.value - oracle) < 3 * est.se + 2e-3
    assert exploitability(g, sigma) == pytest.approx(2 / 3, abs=1e-15)


def test_mc_el_all_rock():
    g = rps_matrix()
    est = monte_carlo_el(g, (1.0, 0.0, 0.0), 400_000, make_rng(3))
    assert triangle_quadrature_el(g.payoff, (1, 0, 0)) == pytest.approx(1 / 3, abs=2e-3)
    assert abs(est.value - 1 / 3) < 3 * est.se + 2e-3


def test_mc_el_nash_is_zero():
    est = monte_carlo_el(rps_matrix(), (1 / 3, 1 / 3, 1 / 3), 10_000, make_rng(4))
    assert est.value == pytest.approx(0.0, abs=1e-12)
    assert est.n_losing > 0


def test_mc_el_scale_consistent():
    g = rps_matrix()
    a = monte_carlo_el(g, (0.2, 0.5, 0.3), 50_000, make_rng(5))
    b = monte_carlo_el(MatrixGame(2 * g.payoff), (0.2, 0.5, 0.3), 50_000, make_rng(5))
    assert b.value == pytest.approx(2 * a.value, rel=1e-12)


def test_mc_el_argument_checks():
    with pytest.raises(ValueError):
        monte_carlo_el(rps_matrix(), (1, 0, 0), 999, make_rng(0))
    with pytest.raises(ValueError):
        monte_carlo_el(rps_matrix(), (0.5, 0.6, 0.0), 1000, make_rng(0))


def test_identity_check_reports_both_forms():
    g = rps_matrix()
    res = check_el_identity(g, (0.0, 2 / 3, 1 / 3), 400_000, make_rng(6))
    assert res.precondition_ok
    assert res.rhs == pytest.approx((2 / 3) / 4, abs=1e-15)
    assert res.vertex_mean == pytest.approx((2 / 3) / 3, abs=1e-15)
    # the sampled mean sits on E/n, far outside 3 SE of E/(n+1)
    assert abs(res.lhs - res.vertex_mean) < 3 * res.se + 1e-3
    assert not res.passed
    rock = check_el_identity(g, (1.0, 0.0, 0.0), 10_000, make_rng(7))
    assert rock.rhs == 0.25 and rock.vertex_mean == pytest.approx(1 / 3)


def test_identity_guard_two_exploiters():
    sigma = (0.5, 0.1, 0.4)
    assert len(exploiting_responses(rps_matrix(), sigma)) == 2
    res = check_el_identity(rps_matrix(), sigma, 1000, make_rng(0))
    assert not res.precondition_ok and not res.passed and "precondition" in res.message


def test_identity_on_random_games_matches_vertex_mean():
    rng = np.random.default_rng(8)
    hits = 0
    while hits < 3:
        g = random_antisymmetric(3, rng)
        sigma = rng.dirichlet(np.ones(3))
        if len(exploiting_responses(g, sigma)) != 1:
            continue
        hits += 1
        res = check_el_identity(g, sigma, 200_000, make_rng(9, hits))
        assert abs(res.lhs - triangle_quadrature_el(g.payoff, sigma, n=300)) < 3 * res.se + 3e-3


def test_prop1_examples():
    g = rps_matrix()
    single = check_prop1(g, [[0.2, 0.3, 0.5]], [1.0])
    assert single.mixture_E == pytest.approx(single.expected_E, abs=1e-15) and single.passed
    two = check_prop1(g, [[1, 0, 0], [0, 1, 0]], [0.5, 0.5])
    assert two.expected_E == 1.0 and two.mixture_E == 0.5 and two.passed


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_prop1_random_games(seed, k):
    rng = np.random.default_rng(seed)
    g = random_antisymmetric(4, rng)
    res = check_prop1(g, rng.dirichlet(np.ones(4), size=k), rng.dirichlet(np.ones(k)))
    assert res.passed


@pytest.fixture(scope="module")
def fixture():
    return simplex_fixture(rps_matrix(), 1_000_000, make_rng(10))


@pytest.mark.parametrize("delta", [0.2, 0.1, 0.05])
def test_prop2_bound_near_nash(fixture, delta):
    reps, rewards = fixture
    g = rps_matrix()
    nash = check_prop2(g, (1 / 3, 1 / 3, 1 / 3), reps, rewards, Prop2Params(0.0, 1.0, 1.0, delta))
    assert nash.passed and nash.el_delta < delta
    near = check_prop2(g, (0.35, 0.35, 0.30), reps, rewards, Prop2Params(0.05, 1.0, 1.0, delta))
    assert near.passed and near.bound == pytest.approx(0.05 + delta)


def test_prop2_precondition(fixture):
    reps, rewards = fixture
    res = check_prop2(rps_matrix(), (0.5, 0.3, 0.2), reps, rewards, Prop2Params(0.05, 1.0, 1.0, 0.1))
    assert not res.passed and "precondition" in res.message


def test_prop2_params_nonnegative():
    with pytest.raises(ValueError):
        Prop2Params(-0.1, 1.0, 1.0, 0.1)


def test_report(tmp_path):
    rows = verify_all(seed=0, n_samples=20_000, fixture_samples=100_000)
    path = tmp_path / "toy.csv"
    write_report_csv(path, rows)
    assert len(path.read_text().splitlines()) == len(rows) + 1
    text = format_report(rows)
    assert "prop1" in text and "el_identity" in text
    assert {r.check for r in rows} == {"el_identity", "prop1", "prop2", "el_delta_limit"}
