"""Offline dataset generation, partial reward labelling and JSONL storage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .games import GameSpec, make_game, play_episode
from .numkit import make_rng
from .trajectory import Trajectory

FORMAT_VERSION = 1

__all__ = [
    "Dataset",
    "DatasetFormatError",
    "Trajectory",
    "TrainingItem",
    "generate_dataset",
    "label_rewards",
    "read_jsonl",
    "training_view",
    "write_jsonl",
]


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    spec: GameSpec
    trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def labeled_ids(self) -> set[str]:
        return {t.id for t in self.trajectories if t.reward is not None}

    def __len__(self) -> int:
        return len(self.trajectories)

    def by_id(self) -> dict[str, Trajectory]:
        return {t.id: t for t in self.trajectories}

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        return Dataset(self.spec, [t for t in self.trajectories if t.id in keep])


class TrainingItem(NamedTuple):
    """What learning code may see of a trajectory: no reward, no labels."""

    id: str
    observations: np.ndarray
    actions: np.ndarray


def training_view(trajs: Dataset | Sequence[Trajectory]) -> list[TrainingItem]:
    items = trajs.trajectories if isinstance(trajs, Dataset) else trajs
    return [TrainingItem(t.id, t.observations, t.actions) for t in items]


def generate_dataset(policies: Sequence, game, games_per_ordered_pair: int, seed: int) -> Dataset:
    """Every ordered pair (i, j), self-pairs included, plays
    ``games_per_ordered_pair`` episodes and both seats' trajectories are kept."""
    if len(policies) < 2:
        raise ValueError("need at least two policies")
    if games_per_ordered_pair < 1:
        raise ValueError("games_per_ordered_pair must be >= 1")
    if isinstance(game, str):
        game = make_game(game)
    out: list[Trajectory] = []
    for i, pi in enumerate(policies):
        for j, pj in enumerate(policies):
            for g in range(games_per_ordered_pair):
                stem = f"p{i:02d}v{j:02d}g{g:04d}"
                ego, opp = play_episode(game, pi, pj, make_rng(seed, i, j, g), ids=(stem + "a", stem + "b"))
                ego.meta = {"demo_id": pi.name, "opp_id": pj.name, "seed": seed}
                opp.meta = {"demo_id": pj.name, "opp_id": pi.name, "seed": seed}
                out.extend((ego, opp))
    return Dataset(game.spec, out)


def label_rewards(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep the reward of a uniformly chosen ``round(fraction * N)`` trajectories
    and erase all others."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot label an empty dataset")
    k = int(np.floor(fraction * n + 0.5))
    chosen = set(make_rng(seed, "label").permutation(n)[:k].tolist())
    trajs = [
        replace(t, reward=t.reward if idx in chosen else None, meta=dict(t.meta))
        for idx, t in enumerate(dataset.trajectories)
    ]
    return Dataset(dataset.spec, trajs)


# -- JSONL ------------------------------------------------------------------------------------

def _dumps(obj) -> str:
    # floats use repr, which round-trips fp64 exactly
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    lines = [_dumps({"format_version": FORMAT_VERSION, "spec": dataset.spec.to_dict()})]
    for t in dataset.trajectories:
        rec = {
            "id": t.id,
            "obs": t.observations.tolist(),
            "actions": t.actions.tolist(),
            "meta": t.meta,
        }
        if t.reward is not None:
            rec["reward"] = float(t.reward)
        lines.append(_dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def read_jsonl(path: str | Path) -> Dataset:
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(raw[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: malformed header on line 1") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    spec = GameSpec(**header["spec"])
    trajs = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            obs = np.array(rec["obs"], dtype=np.float64).reshape(len(rec["obs"]), spec.obs_dim)
            trajs.append(Trajectory(rec["id"], obs, np.array(rec["actions"]), rec.get("reward"), rec.get("meta", {})))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path}: malformed trajectory on line {lineno}: {exc}") from exc
    return Dataset(spec, trajs)
