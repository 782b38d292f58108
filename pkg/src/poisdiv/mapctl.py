"""Regime-coupled value iteration for the Markov-modulated dividend problem.

Each regime ``i`` is an auxiliary problem killed at its switching rate; the
payoff at the kill time is the regime-averaged value after the switch jump,
computed by :func:`hat`.  Iterating ``T_sup`` from ``V_0(x, i) = x gamma/(gamma+r_i)``
contracts at rate ``max_i lam_i / (lam_i + r_i)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .auxctl import AuxProblem, PayoffError, PayoffGrid, find_b_psi, performance_J
from .levy import LevyModel

log = logging.getLogger(__name__)


class ClassViolation(ValueError):
    """An iterate or its hat transform left the concave, slope-bounded class."""


class ConvergenceError(RuntimeError):
    """Value iteration did not reach the requested tolerance."""


@dataclass(frozen=True)
class SwitchJump:
    """Downward jump applied at a regime switch: exponential with ``mean < 0``, or none."""

    mean: float = 0.0

    def __post_init__(self) -> None:
        if not (self.mean <= 0 and np.isfinite(self.mean)):
            raise ValueError(f"switch jump mean must be finite and <= 0, got {self.mean}")

    @property
    def is_zero(self) -> bool:
        return self.mean == 0.0


@dataclass(frozen=True, eq=False)
class MapModel:
    models: tuple[LevyModel, ...]
    generator: np.ndarray
    switch_jumps: tuple[tuple[SwitchJump, ...], ...]
    discounts: tuple[float, ...]
    gamma: float
    phi: float

    def __post_init__(self) -> None:
        n = len(self.models)
        Q = np.asarray(self.generator, dtype=float)
        object.__setattr__(self, "generator", Q)
        object.__setattr__(self, "discounts", tuple(float(r) for r in self.discounts))
        if n < 2:
            raise ValueError("need at least two regimes")
        if Q.shape != (n, n):
            raise ValueError(f"generator must be {n}x{n}")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("generator off-diagonal entries must be >= 0")
        if np.any(np.abs(Q.sum(axis=1)) > 1e-12 * max(1.0, np.abs(Q).max())):
            raise ValueError("generator rows must sum to 0")
        if np.any(off.sum(axis=1) <= 0):
            raise ValueError("every regime needs a positive switching rate")
        if len(self.discounts) != n or any(not r > 0 for r in self.discounts):
            raise ValueError("need one positive discount rate per regime")
        if len(self.switch_jumps) != n or any(len(row) != n for row in self.switch_jumps):
            raise ValueError("switch_jumps must be an n x n table")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.phi > 1:
            raise ValueError(f"phi must exceed 1, got {self.phi}")

    @property
    def n_regimes(self) -> int:
        return len(self.models)

    @property
    def switch_rates(self) -> np.ndarray:
        """lam_i = sum_{j != i} lam_ij."""
        return -np.diag(self.generator)

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.discounts) + self.switch_rates

    @cached_property
    def aux(self) -> tuple[AuxProblem, ...]:
        lam = self.switch_rates
        return tuple(AuxProblem(m, r, float(lam[i]), self.gamma, self.phi)
                     for i, (m, r) in enumerate(zip(self.models, self.discounts)))


@dataclass(frozen=True)
class GridSpec:
    h: float = 0.05
    x_max: float = 60.0

    @property
    def xs(self) -> np.ndarray:
        n = int(round(self.x_max / self.h))
        if not math.isclose(n * self.h, self.x_max, rel_tol=1e-9):
            raise ValueError("x_max must be a multiple of h")
        return np.linspace(0.0, self.x_max, n + 1)


@dataclass(frozen=True, eq=False)
class RegimeValue:
    """Per-regime values on a shared grid, linear beyond it; slope phi below 0."""

    xs: np.ndarray
    values: np.ndarray
    tail_slopes: np.ndarray
    phi: float
    barriers: np.ndarray | None = None

    @property
    def n_regimes(self) -> int:
        return self.values.shape[0]

    def payoff(self, i: int) -> PayoffGrid:
        return PayoffGrid(self.xs, self.values[i], float(self.tail_slopes[i]))

    def __call__(self, x, i: int):
        x = np.asarray(x, dtype=float)
        inside = np.interp(np.maximum(x, 0.0), self.xs, self.values[i])
        beyond = self.values[i, -1] + self.tail_slopes[i] * (x - self.xs[-1])
        out = np.where(x > self.xs[-1], beyond, inside)
        out = np.where(x < 0, self.values[i, 0] + self.phi * x, out)
        return out if out.ndim else float(out)

    def distance(self, other: "RegimeValue") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def check_class(self, tol: float = 1e-7) -> None:
        """Concave on the grid with slopes in [0, phi] (tail slope in [0, 1])."""
        for i in range(self.n_regimes):
            s = np.diff(self.values[i]) / np.diff(self.xs)
            scale = max(1.0, float(np.abs(s).max()))
            if np.any(np.diff(s) > tol * scale):
                raise ClassViolation(f"regime {i + 1}: iterate is not concave")
            if s.min() < -tol or s.max() > self.phi + tol:
                raise ClassViolation(f"regime {i + 1}: slope outside [0, phi]")
            if not (-tol <= self.tail_slopes[i] <= 1 + tol):
                raise ClassViolation(f"regime {i + 1}: tail slope outside [0, 1]")

    @classmethod
    def initial(cls, mp: MapModel, grid: GridSpec) -> "RegimeValue":
        """V_0(x, i) = x gamma / (gamma + r_i): pay the whole surplus at the first observation."""
        xs = grid.xs
        slopes = np.array([mp.gamma / (mp.gamma + r) for r in mp.discounts])
        return cls(xs, slopes[:, None] * xs[None, :], slopes, mp.phi)


def hat(mp: MapModel, f: RegimeValue, i: int, x) -> np.ndarray:
    """Expected post-switch value from regime i, covering a deficit at cost phi.

    For an exponential jump of mean -m the convolution against the piecewise-linear
    f is exact; a deficit below zero is injected, contributing phi * (x + y).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("hat is defined for x >= 0")
    lam = mp.switch_rates[i]
    out = np.zeros_like(x)
    for j in range(mp.n_regimes):
        rate = mp.generator[i, j]
        if j == i or rate == 0:
            continue
        jump = mp.switch_jumps[i][j]
        fj = f.payoff(j).fn
        if jump.is_zero:
            term = np.asarray(fj(x))
        else:
            kappa = -1.0 / jump.mean
            inner = kappa * np.asarray(fj.exp_integral(kappa, 0.0, x, x))
            term = inner + np.exp(-kappa * x) * (f.values[j, 0] - mp.phi / kappa)
        out = out + rate / lam * term
    return out if out.ndim else float(out)


def hat_payoff(mp: MapModel, f: RegimeValue, i: int) -> PayoffGrid:
    rates = mp.generator[i].copy()
    rates[i] = 0.0
    tail = float(np.dot(rates, f.tail_slopes) / mp.switch_rates[i])
    try:
        out = PayoffGrid(f.xs, hat(mp, f, i, f.xs), tail, tol=1e-7)
    except PayoffError as exc:
        raise ClassViolation(f"regime {i + 1}: hat transform left the class: {exc}") from exc
    if out.chord_slopes[0] > mp.phi + 1e-7:
        raise ClassViolation(f"regime {i + 1}: hat transform slope at 0 exceeds phi")
    return out


def _sample(mp: MapModel, f: RegimeValue, barriers, psis) -> RegimeValue:
    rows, tails = [], []
    for i, aux in enumerate(mp.aux):
        v = np.asarray(performance_J(aux, f.xs, psis[i], float(barriers[i])))
        rows.append(v)
        tails.append(float(np.clip((v[-1] - v[-2]) / (f.xs[-1] - f.xs[-2]), 0.0, 1.0)))
    return RegimeValue(f.xs, np.vstack(rows), np.array(tails), mp.phi, np.asarray(barriers, float))


def apply_T_b(mp: MapModel, f: RegimeValue, barriers: Sequence[float]) -> RegimeValue:
    """Value of the regime-wise double-barrier strategy with continuation payoff hat(f)."""
    barriers = np.asarray(barriers, dtype=float)
    if np.any(barriers <= 0):
        raise ValueError("barriers must be positive")
    psis = [hat_payoff(mp, f, i) for i in range(mp.n_regimes)]
    return _sample(mp, f, barriers, psis)


def apply_T_sup(mp: MapModel, f: RegimeValue, b_max: float = 1e3) -> tuple[RegimeValue, np.ndarray]:
    """Optimise the barrier per regime, then apply T_b at those barriers."""
    psis = [hat_payoff(mp, f, i) for i in range(mp.n_regimes)]
    barriers = np.array([find_b_psi(aux, psis[i], b_max=b_max) for i, aux in enumerate(mp.aux)])
    out = _sample(mp, f, barriers, psis)
    out.check_class()
    return out, barriers


def contraction_beta(mp: MapModel) -> float:
    lam = mp.switch_rates
    return float(np.max(lam / (lam + np.asarray(mp.discounts))))


@dataclass
class TraceRow:
    n: int
    gap: float
    barriers: np.ndarray


@dataclass
class SolveResult:
    value: RegimeValue
    barriers: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def solve(mp: MapModel, grid: GridSpec = GridSpec(), eps: float = 0.01,
          max_iters: int | None = None, b_max: float = 1e3,
          on_iter: Callable[[TraceRow], None] | None = None) -> SolveResult:
    """Iterate T_sup until successive iterates differ by less than eps in grid sup-norm."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    beta = contraction_beta(mp)
    V = RegimeValue.initial(mp, grid)
    trace: list[TraceRow] = []
    limit = max_iters
    n = 0
    while True:
        n += 1
        V_new, b = apply_T_sup(mp, V, b_max=b_max)
        gap = V_new.distance(V)
        row = TraceRow(n, gap, b)
        trace.append(row)
        log.debug("iteration %d gap %.3e barriers %s", n, gap, b)
        if on_iter is not None:
            on_iter(row)
        V = V_new
        if gap < eps:
            if np.any(b > grid.x_max / 4):
                log.warning("barriers %s exceed x_max/4; consider a wider grid", b)
            return SolveResult(V, b, trace)
        if limit is None:
            limit = math.ceil(math.log(eps / gap) / math.log(beta)) + 50 if gap > eps else 50
        if n >= limit:
            raise ConvergenceError(f"no convergence after {n} iterations (gap {gap:.3e})")


def estimate_bounds(mp: MapModel, x: float, i: int, n_paths: int, seed: int = 0):
    """Monte-Carlo values of the pay-everything upper strategy and the pay-once lower strategy."""
    from .sim import SimConfig, simulate_bound_strategies

    cfg = SimConfig(seed=seed, n_paths=n_paths)
    return simulate_bound_strategies(mp, x, i, cfg)
