import functools
import time
from dataclasses import dataclass

import numpy as np
import pytest

from stril.dataset import Dataset, generate_dataset, label_rewards, training_view
from stril.demonstrators import rps_roster
from stril.games import RepeatedRPS
from stril.indicators import IndicatorRecord, compute_records
from stril.pvrnn import PVRNNConfig, TrainResult, train

# RPS fixture shared by the acceptance criteria on representations and filtering
FIXTURE_HORIZON = 100
FIXTURE_GAMES_PER_PAIR = 60
FIXTURE_LABEL_FRACTION = 0.05
FIXTURE_EPOCHS = 50

ACCEPTANCE_LINES: list[str] = []


@dataclass
class RPSRun:
    seed: int
    dataset: Dataset
    result: TrainResult
    table: np.ndarray
    records: list[IndicatorRecord]
    delta: float
    seconds: float

    @property
    def demo_ids(self) -> np.ndarray:
        return np.array([t.meta["demo_id"] for t in self.dataset.trajectories])


@functools.lru_cache(maxsize=None)
def rps_run(seed: int) -> RPSRun:
    t0 = time.perf_counter()
    game = RepeatedRPS(FIXTURE_HORIZON)
    full = generate_dataset(rps_roster(), game, FIXTURE_GAMES_PER_PAIR, seed=seed)
    ds = label_rewards(full, FIXTURE_LABEL_FRACTION, seed=seed)
    res = train(training_view(ds), PVRNNConfig(epochs=FIXTURE_EPOCHS, seed=seed), 3, 3)
    table = np.array([res.reps[t.id] for t in ds.trajectories])
    records, delta, _ = compute_records(res.model, ds.trajectories, table, seed=seed)
    return RPSRun(seed, ds, res, table, records, delta, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def rps0() -> RPSRun:
    return rps_run(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
