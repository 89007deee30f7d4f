# %% [markdown]
# # Exploited Level on a matrix game
#
# Opponents are drawn uniformly from the RPS simplex. For a strategy with a
# single exploiting pure response the losing region is itself a simplex, so
# the conditional mean loss can be checked three ways: Monte Carlo, a
# triangle quadrature, and the vertex average E/n.

# %%
import numpy as np

from stril.games import exploitability, rps_matrix
from stril.numkit import make_rng
from stril.toymodel import check_el_identity, monte_carlo_el, simplex_fixture
from stril.indicators import el_delta

game = rps_matrix()
sigma = (0.0, 2 / 3, 1 / 3)
E = exploitability(game, sigma)
E

# %%
est = monte_carlo_el(game, sigma, 1_000_000, make_rng(0))
est

# %%
res = check_el_identity(game, sigma, 1_000_000, make_rng(1))
print(f"MC {res.lhs:.5f}  E/(n+1) {res.rhs:.5f}  E/n {res.vertex_mean:.5f}")

# %% [markdown]
# The sample mean lands on E/n. A brute-force check: centroids of a fine
# triangulation give the same number without any sampling.

# %%
n = 600
i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
k = n - i - j
pts = np.vstack([
    np.stack([3 * i + 1, 3 * j + 1, 3 * k - 2], -1)[k >= 1],
    np.stack([3 * i + 2, 3 * j + 2, 3 * k - 4], -1)[k >= 2],
]) / (3.0 * n)
r = pts @ (np.asarray(sigma) @ game.payoff)
(-r[r <= 0]).mean(), 2 / 9

# %% [markdown]
# ## Neighbourhood estimate
#
# Label a million simplex strategies with their expected reward against one
# uniform opponent; EL_delta averages the losses of labelled neighbours.

# %%
reps, rewards = simplex_fixture(game, 1_000_000, make_rng(2))
for delta in (0.2, 0.1, 0.05, 0.02):
    print(delta, el_delta(sigma, reps, rewards, delta))

# %%
nash = (1 / 3, 1 / 3, 1 / 3)
[el_delta(nash, reps, rewards, d) for d in (0.2, 0.1, 0.05)]
