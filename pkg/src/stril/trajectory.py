"""The per-player trajectory record shared by games, datasets and models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class Trajectory:
    """One player's decision points in one episode.

    ``meta`` carries evaluation-only labels (``demo_id``, ``opp_id``) and the
    generation ``seed``; training code must go through
    :func:`stril.dataset.training_view`, which drops it.
    """

    id: str
    observations: np.ndarray
    actions: np.ndarray
    reward: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.observations.ndim != 2:
            raise ValueError("observations must be a (T, obs_dim) array")
        if len(self.observations) != len(self.actions) or len(self.actions) < 1:
            raise ValueError("observations and actions must have equal length >= 1")

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
            and self.reward == other.reward
            and self.meta == other.meta
        )
