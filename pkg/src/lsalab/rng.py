"""Counter-based random number streams.

Every stochastic routine in the package draws from a Philox generator
keyed by an integer seed or a sequence of integers.  Distinct key tuples
give statistically independent streams, which is how the experiment
harness assigns one substream per (grid point, trajectory) pair without
any dependence on scheduling order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """Build a Philox generator from an integer seed or a key tuple."""
    if isinstance(seed, (int, np.integer)):
        key: list[int] = [int(seed)]
    else:
        key = [int(s) for s in seed]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def substream(base_seed: int, *indices: int) -> np.random.Generator:
    """Generator for the substream identified by (base_seed, *indices)."""
    return make_rng([base_seed, *indices])
