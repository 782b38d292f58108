"""Poisson-observed dividends with capital injection under a regime-switching surplus."""

from __future__ import annotations

from .auxctl import (AuxProblem, PayoffGrid, dJ_at_b, dJ_dx, find_b_psi, net_dividend_value,
                     performance_J, potential_measure, potential_until_ruin, ruin_laplace,
                     verify_hjb)
from .levy import LevyModel, find_roots, laplace_exponent, mean_increment
from .mapctl import (GridSpec, MapModel, RegimeValue, SwitchJump, apply_T_b, apply_T_sup,
                     contraction_beta, estimate_bounds, hat, solve)
from .scale import ScaleSet
from .sim import (SimConfig, estimate_exit, simulate_controlled, simulate_double_barrier,
                  simulate_single_barrier_killed, simulate_uncontrolled)

__all__ = [
    "AuxProblem", "GridSpec", "LevyModel", "MapModel", "PayoffGrid", "RegimeValue", "ScaleSet",
    "SimConfig", "SwitchJump", "apply_T_b", "apply_T_sup", "contraction_beta", "dJ_at_b", "dJ_dx",
    "estimate_bounds", "estimate_exit", "find_b_psi", "find_roots", "hat", "laplace_exponent",
    "mean_increment", "net_dividend_value", "performance_J", "potential_measure",
    "potential_until_ruin", "ruin_laplace", "simulate_controlled", "simulate_double_barrier",
    "simulate_single_barrier_killed", "simulate_uncontrolled", "solve", "verify_hjb",
]
__version__ = "0.1.0"
