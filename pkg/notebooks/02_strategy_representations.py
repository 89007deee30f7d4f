# %% [markdown]
# # Strategy representations on repeated RPS
#
# Train the P-VRNN on the five-demonstrator roster, then look at what the
# per-trajectory vectors and the randomness indicator pick up. Small sizes
# so this runs in a few minutes on one core.

# %%
import numpy as np

from stril.dataset import generate_dataset, label_rewards, training_view
from stril.demonstrators import rps_roster, strategy_entropy
from stril.games import RepeatedRPS
from stril.indicators import compute_records
from stril.numkit import pca_project
from stril.pvrnn import PVRNNConfig, train

game = RepeatedRPS(100)
roster = rps_roster()
ds = label_rewards(generate_dataset(roster, game, 20, seed=0), 0.05, seed=0)
len(ds), len(ds.labeled_ids)

# %%
res = train(training_view(ds), PVRNNConfig(epochs=50, seed=0), 3, 3,
            log=lambda e, loss: e % 10 == 0 and print(e, round(loss, 3)))

# %%
table = np.array([res.reps[t.id] for t in ds.trajectories])
demo = np.array([t.meta["demo_id"] for t in ds.trajectories])
records, delta, est = compute_records(res.model, ds.trajectories, table, seed=0)
ri = np.array([r.ri for r in records])
el = np.array([r.el_estimate for r in records])

for p in roster:
    m = demo == p.name
    print(f"{p.name:<14} RI {ri[m].mean():7.2f}  EL {el[m].mean():6.2f}  "
          f"entropy {strategy_entropy(p, game, 10, seed=0):.3f}")

# %% [markdown]
# Constant and counter strategies sit near zero RI; the two mixed strategies
# and Nash near the T ln 3 ceiling. EL orders things differently: Rock is the
# most exploited, Nash the least.

# %%
xy = pca_project(table, 2).projected
centres = {n: xy[demo == n].mean(axis=0) for n in np.unique(demo)}
centres

# %%
d = np.sqrt(((table[:, None] - table[None]) ** 2).sum(-1))
np.fill_diagonal(d, np.inf)
(demo[d.argmin(1)] == demo).mean()  # leave-one-out 1-NN accuracy
