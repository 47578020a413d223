"""Derivation of independent random streams from one 64-bit master seed.

All stochastic components draw from Philox streams spawned off a seed
sequence keyed by (master seed, labels), so module-level streams stay
independent and stable across runs and platforms.
"""

from __future__ import annotations

import numpy as np


def substream(master_seed: int, *labels: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(labels))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(master_seed: int, *labels: int) -> int:
    """A stable 64-bit child seed, for APIs that take plain integers."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(labels))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
