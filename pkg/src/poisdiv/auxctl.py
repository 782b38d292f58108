"""Single-regime auxiliary problem: Poissonian dividends, reflection at zero.

The surplus ``U`` pays its excess over a barrier ``b`` at the epochs of a
Poisson(gamma) clock and is topped up continuously at zero at unit cost ``phi``.
Killing at rate ``lam`` adds a terminal payoff ``Psi``; discounting is at ``r``,
so everything is computed at ``q = r + lam``.

Densities of the controlled measures are exponential sums on a few pieces.
Above the barrier only the negative roots of ``psi(s) = q + gamma`` survive:
the growing terms cancel exactly and are dropped analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from ._expint import Piecewise, exprel_h
from .levy import LevyModel
from .scale import ScaleSet


class PayoffError(ValueError):
    """Payoff grid violates concavity or its slope bounds."""


class BarrierSearchError(ArithmeticError):
    """The barrier bracket could not be closed below ``b_max``."""


@dataclass(frozen=True, eq=False)
class PayoffGrid:
    """Concave piecewise-linear payoff on a grid starting at 0, linear beyond it."""

    xs: np.ndarray
    vals: np.ndarray
    tail_slope: float
    tol: float = 1e-9

    def __post_init__(self) -> None:
        xs = np.asarray(self.xs, dtype=float)
        vals = np.asarray(self.vals, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "vals", vals)
        if xs.ndim != 1 or len(xs) < 2 or xs.shape != vals.shape:
            raise PayoffError("xs and vals must be matching 1-d arrays of length >= 2")
        if xs[0] != 0.0 or np.any(np.diff(xs) <= 0):
            raise PayoffError("grid must start at 0 and increase strictly")
        if not np.all(np.isfinite(vals)):
            raise PayoffError("payoff values must be finite")
        slopes = self.chord_slopes
        scale = max(1.0, float(np.max(np.abs(slopes))))
        if np.any(np.diff(slopes) > self.tol * scale):
            raise PayoffError("payoff is not concave (chord slopes increase)")
        if not (-self.tol <= self.tail_slope <= 1.0 + self.tol):
            raise PayoffError(f"tail slope {self.tail_slope} outside [0, 1]")

    @property
    def chord_slopes(self) -> np.ndarray:
        return np.append(np.diff(self.vals) / np.diff(self.xs), self.tail_slope)

    @cached_property
    def fn(self) -> Piecewise:
        return Piecewise.continuous(self.xs, self.vals, self.tail_slope)

    @cached_property
    def dfn(self) -> Piecewise:
        """Right derivative (chord slope to the right of each knot)."""
        return self.fn.derivative()

    def __call__(self, x):
        return self.fn(x)

    def right_derivative(self, x):
        return self.dfn(x)

    @classmethod
    def linear(cls, slope: float, intercept: float = 0.0, x_max: float = 20.0,
               h: float = 0.05) -> "PayoffGrid":
        xs = np.linspace(0.0, x_max, int(round(x_max / h)) + 1)
        return cls(xs, intercept + slope * xs, slope)

    @classmethod
    def zero(cls, x_max: float = 20.0) -> "PayoffGrid":
        return cls.linear(0.0, 0.0, x_max, x_max)


@dataclass(frozen=True)
class AuxProblem:
    model: LevyModel
    r: float
    lam: float
    gamma: float
    phi: float

    def __post_init__(self) -> None:
        for name in ("r", "lam", "gamma"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not self.phi > 1:
            raise ValueError(f"phi must exceed 1, got {self.phi}")

    @property
    def q(self) -> float:
        return self.r + self.lam

    @cached_property
    def scale_q(self) -> ScaleSet:
        return ScaleSet.build(self.model, self.q)

    @cached_property
    def scale_g(self) -> ScaleSet:
        """Scale set at level q + gamma; its largest root is Phi_{q+gamma}."""
        return ScaleSet.build(self.model, self.q + self.gamma)


@dataclass(frozen=True)
class _Barrier:
    """Payoff-independent quantities at a fixed barrier."""

    aux: AuxProblem
    b: float

    @cached_property
    def Phi(self) -> float:
        return self.aux.scale_g.phi_q

    @cached_property
    def theta(self) -> np.ndarray:
        """Negative roots at level q + gamma (the decaying rates above b)."""
        return self.aux.scale_g.zeta[:-1]

    @cached_property
    def B(self) -> np.ndarray:
        return self.aux.scale_g.coeffs[:-1]

    @property
    def B_Phi(self) -> float:
        return float(self.aux.scale_g.coeffs[-1])

    @cached_property
    def Zb(self) -> float:
        return self.aux.scale_q.Z(self.b)

    @cached_property
    def Z2b(self) -> float:
        return self.aux.scale_q.Z2(self.b, self.Phi)

    @cached_property
    def Z2b_theta(self) -> np.ndarray:
        return np.array([self.aux.scale_q.Z2(self.b, t) for t in self.theta])

    def K(self, x):
        """Common prefactor of the double-barrier potential measure."""
        ss, a = self.aux.scale_q, self.aux
        u = self.b - np.asarray(x, dtype=float)
        return (a.q * np.asarray(ss.Z2(u, self.Phi)) + a.gamma * np.asarray(ss.Z(u))) / (self.Phi * self.Z2b)

    def ruin(self, x):
        ss, a = self.aux.scale_q, self.aux
        u = self.b - np.asarray(x, dtype=float)
        num = a.gamma * np.asarray(ss.Z(u)) + a.q * np.asarray(ss.Z2(u, self.Phi))
        return num / (a.gamma * self.Zb + a.q * self.Z2b)


@dataclass(frozen=True)
class ExpPiece:
    """Density ``sum_k coeffs[k] * exp(rates[k] * (y - lo))`` on ``(lo, hi)``."""

    lo: float
    hi: float
    rates: np.ndarray
    coeffs: np.ndarray


@dataclass(frozen=True)
class ControlledMeasure:
    atom0: float
    pieces: tuple[ExpPiece, ...]
    split_point: float

    def density(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for pc in self.pieces:
            inside = (y > pc.lo) & (y < pc.hi)
            d = np.where(inside, y - pc.lo, 0.0)[..., None]
            out = out + np.where(inside, np.sum(pc.coeffs * np.exp(pc.rates * d), axis=-1), 0.0)
        return out if out.ndim else float(out)

    def interval_mass(self, a: float, c: float) -> float:
        """Mass of the density part on ``(a, c)``; the atom is excluded."""
        total = 0.0
        for pc in self.pieces:
            lo, hi = max(a, pc.lo), min(c, pc.hi)
            if hi <= lo:
                continue
            start = np.exp(pc.rates * (lo - pc.lo))
            if np.isinf(hi):
                total += float(np.sum(pc.coeffs * start * (-1.0 / pc.rates)))
            else:
                total += float(np.sum(pc.coeffs * start * exprel_h(pc.rates, hi - lo)))
        return total

    def total_mass(self) -> float:
        return self.atom0 + self.interval_mass(0.0, np.inf)

    def integrate(self, f: Piecewise) -> float:
        """int f dmu, including the atom at zero."""
        total = self.atom0 * float(f(0.0)) if self.atom0 else 0.0
        for pc in self.pieces:
            for r, c in zip(pc.rates, pc.coeffs):
                total += c * f.exp_integral(r, pc.lo, pc.hi, pc.lo)
        return float(total)


def _pieces(parts) -> tuple[ExpPiece, ...]:
    return tuple(ExpPiece(float(lo), float(hi), np.asarray(r, float), np.asarray(c, float))
                 for lo, hi, r, c in parts if hi > lo)


def _check_x(x) -> float:
    x = float(x)
    if x < 0:
        raise ValueError(f"starting level must be >= 0, got {x}")
    return x


def _check_b(b) -> float:
    b = float(b)
    if not b > 0:
        raise ValueError(f"barrier must be positive, got {b}")
    return b


def ruin_laplace(aux: AuxProblem, x, b: float):
    """E_x[exp(-q kappa)] for the single-barrier process killed below 0."""
    bar = _Barrier(aux, _check_b(b))
    out = bar.ruin(np.maximum(np.asarray(x, dtype=float), 0.0))
    return out if np.ndim(out) else float(out)


def potential_until_ruin(aux: AuxProblem, x: float, b: float) -> ControlledMeasure:
    """Law of U^b at an independent exp(q) time, on the event it precedes ruin."""
    x, b = _check_x(x), _check_b(b)
    bar = _Barrier(aux, b)
    ss, q = aux.scale_q, aux.q
    zeta, A = ss.zeta, ss.coeffs
    R = float(bar.ruin(x))
    spread = bar.Z2b_theta - bar.Z2b
    parts = []
    if x < b:
        parts.append((0.0, x, zeta, R * q * A))
        parts.append((x, b, zeta, q * A * (R * np.exp(zeta * x) - 1.0)))
        coef = q * bar.B * (ss.Z2(b - x, bar.Phi) - np.array([ss.Z2(b - x, t) for t in bar.theta])
                            + R * spread)
        parts.append((b, np.inf, bar.theta, coef))
    else:
        parts.append((0.0, b, zeta, R * q * A))
        theta_all = aux.scale_g.zeta
        spread_all = np.append(spread, 0.0)
        lead = np.exp(bar.Phi * (b - x)) + R * spread_all
        parts.append((b, x, theta_all, q * aux.scale_g.coeffs * lead))
        tail = q * bar.B * (np.exp(bar.theta * (x - b)) * lead[:-1] - 1.0)
        parts.append((x, np.inf, bar.theta, tail))
    return ControlledMeasure(0.0, _pieces(parts), b)


def potential_measure(aux: AuxProblem, x: float, b: float) -> ControlledMeasure:
    """Law of the reflected double-barrier process U^{0,b} at an independent exp(q) time."""
    x, b = _check_x(x), _check_b(b)
    bar = _Barrier(aux, b)
    ss, q, g = aux.scale_q, aux.q, aux.gamma
    zeta, A = ss.zeta, ss.coeffs
    K = float(bar.K(x))
    lead = K * bar.theta * bar.Z2b_theta
    parts = []
    if x < b:
        parts.append((0.0, x, zeta, K * A * zeta))
        parts.append((x, b, zeta, A * (K * zeta * np.exp(zeta * x) - q)))
        coef = bar.B * (lead - g * ss.Z(b - x) - q * np.array([ss.Z2(b - x, t) for t in bar.theta]))
        parts.append((b, np.inf, bar.theta, coef))
    else:
        parts.append((0.0, b, zeta, K * A * zeta))
        theta_all = aux.scale_g.zeta
        lead_all = np.append(lead, K * bar.Phi * bar.Z2b)
        parts.append((b, x, theta_all, aux.scale_g.coeffs * (lead_all - g)))
        tail = bar.B * (np.exp(bar.theta * (x - b)) * (lead - g) - q)
        parts.append((x, np.inf, bar.theta, tail))
    return ControlledMeasure(K * ss.W0, _pieces(parts), b)


def net_dividend_value(aux: AuxProblem, x, b: float):
    """E_x[int exp(-q t) d(D - phi R)] for the double-barrier strategy; linear below 0."""
    b = _check_b(b)
    val = _ndv_derivs(_Barrier(aux, b), np.asarray(x, dtype=float))[0]
    return val if np.ndim(val) else float(val)


def _ndv_derivs(bar: _Barrier, x: np.ndarray):
    aux = bar.aux
    ss, q, g, phi = aux.scale_q, aux.q, aux.gamma, aux.phi
    xp = np.maximum(x, 0.0)
    u = bar.b - xp
    Zu, Wu = np.asarray(ss.Z(u)), _w_from_right(ss.W, u)
    Z2u = np.asarray(ss.Z2(u, bar.Phi))
    C = (g * bar.Zb - phi * (q + g)) / ((q + g) * bar.Phi * bar.Z2b)
    val = -g / (q + g) * (np.asarray(ss.Zbar(u)) + aux.model.dpsi0() / q) + C * (Z2u + g / q * Zu)
    d1 = g / (q + g) * Zu - C * bar.Phi * Z2u
    d2 = -g * q / (q + g) * Wu + C * bar.Phi * (bar.Phi * Z2u - g * Wu)
    neg = x < 0
    val0 = val if not np.any(neg) else np.where(neg, phi * x + _ndv_derivs(bar, np.zeros(1))[0][0], val)
    return val0, np.where(neg, phi, d1), np.where(neg, 0.0, d2)


def _w_from_right(fn, u):
    """fn(u) with u = b - x, taking the x > b side at x = b (W vanishes there)."""
    return np.where(u <= 0, 0.0, np.asarray(fn(u)))


def _z_family(ss: ScaleSet, u: np.ndarray, s: float | None):
    """Value and x-derivatives (u = b - x) of Z_q(u) when s is None, else Z_q(u, s)."""
    W, Wp = _w_from_right(ss.W, u), _w_from_right(ss.W_prime, u)
    if s is None:
        return np.asarray(ss.Z(u)), -ss.q * W, ss.q * Wp
    kappa = ss.model.psi(s) - ss.q
    v = np.asarray(ss.Z2(u, s))
    d1 = -(s * v - kappa * W)
    return v, d1, -s * d1 - kappa * Wp


def _payoff_constants(bar: _Barrier, psi: PayoffGrid):
    f, ss, b = psi.fn, bar.aux.scale_q, bar.b
    E = np.array([f.exp_integral(t, b, np.inf, b) for t in bar.theta])
    body = sum(a * z * f.exp_integral(z, 0.0, b, 0.0) for a, z in zip(ss.coeffs, ss.zeta))
    S0 = ss.W0 * f(0.0) + body + float(np.sum(bar.B * bar.theta * bar.Z2b_theta * E))
    return S0, E


def _payoff_term(bar: _Barrier, psi: PayoffGrid, x: np.ndarray):
    """int Psi d(potential measure from x) and its first two x-derivatives, for x >= 0."""
    aux = bar.aux
    ss, q, g, b = aux.scale_q, aux.q, aux.gamma, bar.b
    f = psi.fn
    S0, E = _payoff_constants(bar, psi)
    fx, dfx = np.asarray(f(x), dtype=float), np.asarray(psi.dfn(x), dtype=float)
    below = x < b

    xl = np.minimum(x, b)
    u = b - xl
    K, K1, K2 = _z_family(ss, u, bar.Phi)
    Zu, Zu1, Zu2 = _z_family(ss, u, None)
    K = (q * K + g * Zu) / (bar.Phi * bar.Z2b)
    K1 = (q * K1 + g * Zu1) / (bar.Phi * bar.Z2b)
    K2 = (q * K2 + g * Zu2) / (bar.Phi * bar.Z2b)
    lo_v, lo_1, lo_2 = K * S0, K1 * S0, K2 * S0
    for Bj, Ej, t in zip(bar.B, E, bar.theta):
        z, z1, z2 = _z_family(ss, u, t)
        lo_v = lo_v - Bj * Ej * (g * Zu + q * z)
        lo_1 = lo_1 - Bj * Ej * (g * Zu1 + q * z1)
        lo_2 = lo_2 - Bj * Ej * (g * Zu2 + q * z2)
    for Ak, zk in zip(ss.coeffs, ss.zeta):
        M = np.asarray(f.exp_integral(zk, xl, b, xl))
        M1 = -fx - zk * M
        M2 = -dfx - zk * M1
        lo_v, lo_1, lo_2 = lo_v - q * Ak * M, lo_1 - q * Ak * M1, lo_2 - q * Ak * M2

    xa = np.maximum(x, b)
    Ka, Ka1, Ka2 = _z_family(ss, b - xa, bar.Phi)
    scale_k = q / (bar.Phi * bar.Z2b)
    hi_v = scale_k * Ka * S0 + g / (bar.Phi * bar.Z2b) * S0 - g * float(np.sum(bar.B * E))
    hi_1 = scale_k * Ka1 * S0
    hi_2 = scale_k * Ka2 * S0
    G = np.asarray(f.exp_integral(bar.Phi, b, xa, xa))
    G1 = fx - bar.Phi * G
    G2 = dfx - bar.Phi * G1
    hi_v, hi_1, hi_2 = hi_v + q * bar.B_Phi * G, hi_1 + q * bar.B_Phi * G1, hi_2 + q * bar.B_Phi * G2
    for Bj, t in zip(bar.B, bar.theta):
        N = np.asarray(f.exp_integral(t, xa, np.inf, xa))
        N1 = -fx - t * N
        N2 = -dfx - t * N1
        hi_v, hi_1, hi_2 = hi_v - q * Bj * N, hi_1 - q * Bj * N1, hi_2 - q * Bj * N2

    return (np.where(below, lo_v, hi_v), np.where(below, lo_1, hi_1),
            np.where(below, lo_2, hi_2))


def performance_J_derivs(aux: AuxProblem, x, psi: PayoffGrid, b: float):
    """(J, J', J'') of the double-barrier strategy, vectorised over x.

    Derivatives at x = b are one-sided from the right; J'' is a right derivative
    at payoff kinks.  Below zero J is linear with slope phi.
    """
    b = _check_b(b)
    bar = _Barrier(aux, b)
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = np.atleast_1d(x)
    xp = np.maximum(x, 0.0)
    n0, n1, n2 = _ndv_derivs(bar, xp)
    p0, p1, p2 = _payoff_term(bar, psi, xp)
    w = aux.lam / aux.q
    J, J1, J2 = n0 + w * p0, n1 + w * p1, n2 + w * p2
    neg = x < 0
    if np.any(neg):
        # xp is 0 wherever x < 0, so J there already holds J(0+)
        J = np.where(neg, aux.phi * x + J[neg][0], J)
        J1 = np.where(neg, aux.phi, J1)
        J2 = np.where(neg, 0.0, J2)
    return J.reshape(shape), J1.reshape(shape), J2.reshape(shape)


def performance_J(aux: AuxProblem, x, psi: PayoffGrid, b: float):
    """Value of the double-barrier strategy with dividend barrier b and terminal payoff Psi."""
    J = performance_J_derivs(aux, x, psi, b)[0]
    return J if np.ndim(J) else float(J)


def _bracket(aux: AuxProblem, psi: PayoffGrid, b: float) -> tuple[float, float]:
    """(phi - 1 - E_b[int_0^kappa e^{-qt}(q phi - lam Psi'(U)) dt], E_b[e^{-q kappa}])."""
    mu = potential_until_ruin(aux, b, b)
    R = ruin_laplace(aux, b, b)
    expect = aux.phi * (1.0 - R) - aux.lam / aux.q * mu.integrate(psi.dfn)
    return aux.phi - 1.0 - expect, R


def dJ_at_b(aux: AuxProblem, b: float, psi: PayoffGrid) -> float:
    """Slope of J(.; b) at x = b, through the killed single-barrier process."""
    b = _check_b(b)
    br, R = _bracket(aux, psi, b)
    return br / (R * _Barrier(aux, b).Z2b) + 1.0


def find_b_psi(aux: AuxProblem, psi: PayoffGrid, b_max: float = 1e3, tol: float = 1e-8) -> float:
    """Optimal barrier: the root of the non-increasing barrier bracket."""

    def fn(b):
        return _bracket(aux, psi, b)[0]

    lo, hi = 1e-3, 1.0
    while fn(lo) <= 0:
        lo /= 10.0
        if lo < 1e-12:
            raise BarrierSearchError("barrier bracket is non-positive near zero")
    f_hi = fn(hi)
    while f_hi > 0:
        lo, hi = hi, 2.0 * hi
        if hi > b_max:
            raise BarrierSearchError(f"barrier bracket still positive at b_max={b_max}")
        f_hi = fn(hi)
    b = brentq(fn, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(fn(b)) > tol:
        raise BarrierSearchError(f"barrier residual {abs(fn(b)):.2e} above {tol}")
    return float(b)


def dJ_dx(aux: AuxProblem, x: float, b_psi: float, psi: PayoffGrid) -> float:
    """Slope of J(.; b_psi) from the killed process started at x (valid at the optimal barrier)."""
    x = float(x)
    if x <= 0:
        raise ValueError("dJ_dx needs x > 0")
    mu = potential_until_ruin(aux, x, b_psi)
    R = ruin_laplace(aux, x, b_psi)
    return aux.phi * R + aux.lam / aux.q * mu.integrate(psi.dfn)


@dataclass
class HJBReport:
    below_residual: float
    above_residual: float
    sup_mismatch: float
    slope_excess: float
    argmax_ok: bool
    points: np.ndarray = field(repr=False)

    def ok(self, tol: float = 1e-6) -> bool:
        return (self.below_residual <= tol and self.above_residual <= tol
                and self.sup_mismatch <= tol and self.slope_excess <= tol and self.argmax_ok)


_GL_T, _GL_W = np.polynomial.legendre.leggauss(8)


def _jump_integral(aux: AuxProblem, Jfun, x: float, breaks: np.ndarray) -> float:
    """int_0^inf (J(x+y) - J(x)) nu(dy) by Gauss-Legendre on cells aligned with the kinks of J."""
    model = aux.model
    if model.jump_intensity_p == 0:
        return 0.0
    eta_min = float(model.rates.min())
    start = max(x, float(breaks[-1]))
    tail = start + np.arange(0.0, 60.0 / eta_min + 1.0, 0.5)
    mesh = np.unique(np.concatenate(([x], breaks[breaks > x], tail)))
    a, c = mesh[:-1, None], mesh[1:, None]
    z = 0.5 * (a + c) + 0.5 * (c - a) * _GL_T
    w = 0.5 * (c - a) * _GL_W
    Jz = Jfun(z.ravel()).reshape(z.shape)
    Jx = float(Jfun(np.array([x]))[0])
    total = 0.0
    for wt, eta in model.jump_rates:
        dens = model.jump_intensity_p * wt * eta * np.exp(-eta * (z - x))
        total += float(np.sum(w * dens * (Jz - Jx)))
    return total


def verify_hjb(aux: AuxProblem, b: float, psi: PayoffGrid, grid) -> HJBReport:
    """Residuals of the generator equations and the intervention structure at barrier b.

    ``grid`` must avoid 0 and b.  Below b the check is (A - q)J + lam Psi = 0,
    above it the observation term gamma (x - b + J(b) - J(x)) is added.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid == b):
        raise ValueError("HJB grid must avoid 0 and the barrier")
    model, q = aux.model, aux.q
    J, J1, J2 = performance_J_derivs(aux, grid, psi, b)
    Jb = performance_J(aux, b, psi, b)
    breaks = np.unique(np.concatenate((psi.xs, [b])))

    def Jfun(z):
        return performance_J_derivs(aux, z, psi, b)[0]

    jumps = np.array([_jump_integral(aux, Jfun, x, breaks) for x in grid])
    gen = 0.5 * model.sigma**2 * J2 - model.drift_c * J1 + jumps
    resid = (gen - q * J) + aux.lam * np.asarray(psi(grid))
    above = grid > b
    resid = np.where(above, resid + aux.gamma * (grid - b + Jb - J), resid)
    below_res = float(np.max(np.abs(resid[~above]), initial=0.0))
    above_res = float(np.max(np.abs(resid[above]), initial=0.0))

    sup_mis, argmax_ok = 0.0, True
    for x, Jx in zip(grid, J):
        zs = np.linspace(0.0, x, 401)
        if x >= b:
            zs = np.append(zs, x - b)
        vals = zs + Jfun(x - zs) - Jx
        formula = 0.0 if x < b else (x - b) + Jb - Jx
        sup_mis = max(sup_mis, abs(float(vals.max()) - formula))
        zstar = zs[int(np.argmax(vals))]
        expected = 0.0 if x < b else x - b
        if abs(zstar - expected) > 1e-6 * max(1.0, x) and vals.max() - formula > 1e-9:
            argmax_ok = False
    return HJBReport(below_res, above_res, sup_mis, float(np.max(J1 - aux.phi)), argmax_ok, grid)
