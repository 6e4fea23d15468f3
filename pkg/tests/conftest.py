"""Shared fixtures.

The Monte-Carlo fixtures are session-scoped because they are the
expensive part of the suite; the acceptance tests and the harness
example tests read from the same runs.  Grid order and base_seed are
part of the frozen contract (they determine the per-trajectory RNG
substreams), so do not reorder entries here without refreshing
tests/golden/pilot.json.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from lsalab import (
    ExperimentConfig,
    GridPoint,
    build_model,
    leading_term_check,
    remainder_scaling,
    run_experiment,
)
from lsalab.cli import _preset_spec

GOLDEN = Path(__file__).parent / "golden"

SCALING_BETAS = (0.5, 2.0 / 3.0, 0.75, 5.0 / 6.0)
SCALING_NS = (1000, 3162, 10000, 31623, 100000)


@pytest.fixture(scope="session")
def two_state():
    return build_model(_preset_spec("two_state"))


@pytest.fixture(scope="session")
def pilot():
    with open(GOLDEN / "pilot.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def acceptance_bias_result(two_state):
    """PR/RR errors at n=1e5 for alpha in {0.02, 0.01}, 400 trajectories."""
    cfg = ExperimentConfig(
        model=two_state,
        grid=[GridPoint(n=10**5, alpha=0.02), GridPoint(n=10**5, alpha=0.01)],
        n_traj=400,
        base_seed=11,
        estimators=("pr", "rr"),
        keep_raw=True,
    )
    return cfg, run_experiment(cfg)


@pytest.fixture(scope="session")
def scaling_result(two_state):
    """Remainder-scaling grid: alpha = n^-beta over half-decade horizons.

    The first two beta blocks (1/2 and 2/3) must stay first so their
    substreams match the frozen pilot numbers.
    """
    grid = [GridPoint(n=n, beta=b) for b in SCALING_BETAS for n in SCALING_NS]
    cfg = ExperimentConfig(model=two_state, grid=grid, n_traj=400, base_seed=11)
    return cfg, run_experiment(cfg)


@pytest.fixture(scope="session")
def scaling_fits(scaling_result):
    cfg, res = scaling_result
    return remainder_scaling(cfg, result=res)


@pytest.fixture(scope="session")
def leading_result(two_state):
    cfg = ExperimentConfig(
        model=two_state,
        grid=[GridPoint(n=10**5, beta=0.5)],
        n_traj=400,
        base_seed=11,
    )
    return leading_term_check(cfg)
