"""Seeded, counter-based random streams.

Every consumer receives an explicit ``numpy.random.Generator`` backed by
Philox.  Independent streams are derived from a base seed plus integer keys,
so reordering work never changes which numbers a given episode sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *keys)``.

    String keys are reduced with CRC-32 so that trajectory ids and stage
    names can address streams directly.
    """
    spawn_key = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    seq = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from a probability vector (inverse-CDF, one uniform)."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    # guard against u landing exactly on the top edge
    idx = min(idx, len(probs) - 1)
    while probs[idx] <= 0.0:
        idx -= 1
    return idx
