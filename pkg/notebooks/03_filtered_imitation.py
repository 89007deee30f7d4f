# %% [markdown]
# # Filtering before behaviour cloning
#
# Same pipeline the `stril pipeline` command runs, unrolled. Worst score is
# the minimum mean score over the roster.

# %%
from collections import Counter

import numpy as np

from stril.dataset import generate_dataset, label_rewards, training_view
from stril.demonstrators import rps_roster
from stril.games import RepeatedRPS
from stril.imitation import BCConfig, bc_train, worst_score
from stril.indicators import compute_records, percentile_filter
from stril.pvrnn import PVRNNConfig, train

seed = 0
game = RepeatedRPS(100)
roster = rps_roster()
ds = label_rewards(generate_dataset(roster, game, 60, seed=seed), 0.05, seed=seed)
res = train(training_view(ds), PVRNNConfig(epochs=50, seed=seed), 3, 3)
table = np.array([res.reps[t.id] for t in ds.trajectories])
records, delta, _ = compute_records(res.model, ds.trajectories, table, seed=seed)

# %%
demo = {t.id: t.meta["demo_id"] for t in ds.trajectories}
kept = {
    "all": {t.id for t in ds.trajectories},
    "el": percentile_filter(records, "el", 0.25),
    "ri": percentile_filter(records, "ri", 0.25),
}
{k: Counter(demo[i] for i in v) for k, v in kept.items()}

# %% [markdown]
# RI keeps only the two deterministic demonstrators. Both are easy to
# exploit, so a clone of them inherits that weakness.

# %%
for name, ids in kept.items():
    pol = bc_train(ds, ids, BCConfig(seed=seed), name=name)
    print(worst_score(pol, roster, game, 500, seed).table())
