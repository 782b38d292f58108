from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from poisdiv.auxctl import AuxProblem, PayoffGrid  # noqa: E402
from poisdiv.levy import LevyModel  # noqa: E402
from poisdiv.mapctl import GridSpec, MapModel, SwitchJump, solve  # noqa: E402


@pytest.fixture(scope="session")
def regime1() -> LevyModel:
    return LevyModel.from_mu(-1.5, 0.0, 0.2, [(1.0, 0.2)])


@pytest.fixture(scope="session")
def regime2() -> LevyModel:
    return LevyModel.from_mu(-1.7, 0.0, 0.3, [(1.0, 0.1)])


@pytest.fixture(scope="session")
def brownian_jump() -> LevyModel:
    """Unbounded-variation model with two jump rates."""
    return LevyModel(0.8, 0.6, 0.5, ((0.4, 1.0), (0.6, 3.0)))


@pytest.fixture(scope="session")
def aux1(regime1) -> AuxProblem:
    """Regime-1 auxiliary problem of the two-regime example: q = 0.35."""
    return AuxProblem(regime1, r=0.05, lam=0.3, gamma=0.3, phi=1.5)


def make_map(regime1, regime2, gamma=0.3, phi=1.5, switch_mean=-2.0) -> MapModel:
    sj = SwitchJump(switch_mean)
    return MapModel((regime1, regime2), np.array([[-0.3, 0.3], [0.6, -0.6]]),
                    ((sj, sj), (sj, sj)), (0.05, 0.03), gamma, phi)


@pytest.fixture(scope="session")
def table1_map(regime1, regime2) -> MapModel:
    return make_map(regime1, regime2)


@pytest.fixture(scope="session")
def table1_solution(table1_map):
    return solve(table1_map, GridSpec(0.05, 60.0), eps=0.01)


@pytest.fixture(scope="session")
def concave_payoff() -> PayoffGrid:
    """Concave payoff with slope 1.3 near 0 and 0.3 in the tail."""
    xs = np.linspace(0.0, 20.0, 401)
    return PayoffGrid(xs, 2.0 * np.sqrt(xs + 1.0) - 2.0 + 0.3 * xs, 0.3)


@pytest.fixture(scope="session")
def flat_tail_payoff() -> PayoffGrid:
    xs = np.linspace(0.0, 6.0, 13)
    vals = np.minimum(np.minimum(1.4 * xs, 2.0 + 0.3 * xs), 3.2)
    return PayoffGrid(xs, vals, 0.0)
