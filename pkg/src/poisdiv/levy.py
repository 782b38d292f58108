"""Spectrally positive Lévy models with hyperexponential upward jumps.

Sign convention: ``psi(theta) = log E[exp(-theta * X_1)]``, the Laplace exponent
of the dual (spectrally negative) process.  A surplus written as
``X_t = mu * t + compound Poisson`` therefore has ``drift_c = -mu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial


class ModelError(ValueError):
    """Raised when a model specification violates one of its invariants."""


class RootFindingError(ArithmeticError):
    """Raised when polished roots of psi(s) = q fail the residual check."""


@dataclass(frozen=True)
class LevyModel:
    """Drift, Brownian coefficient and hyperexponential upward jumps.

    ``jump_rates`` holds ``(weight, rate)`` pairs; weights must sum to one.
    Pairs sharing a rate are merged so the exponent has distinct poles.
    """

    drift_c: float
    sigma: float = 0.0
    jump_intensity_p: float = 0.0
    jump_rates: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        c, sigma, p = float(self.drift_c), float(self.sigma), float(self.jump_intensity_p)
        for name, v in (("drift_c", c), ("sigma", sigma), ("jump_intensity_p", p)):
            if not np.isfinite(v):
                raise ModelError(f"{name} must be finite, got {v}")
        if sigma < 0:
            raise ModelError("sigma must be >= 0")
        if p < 0:
            raise ModelError("jump_intensity_p must be >= 0")
        if not (c > 0 or sigma > 0):
            raise ModelError("not a subordinator: need drift_c > 0 or sigma > 0")
        merged: dict[float, float] = {}
        for pair in self.jump_rates:
            w, eta = (float(v) for v in pair)
            if not (0 < w <= 1):
                raise ModelError(f"jump weight must lie in (0, 1], got {w}")
            if not (eta > 0 and np.isfinite(eta)):
                raise ModelError(f"jump rate must be positive and finite, got {eta}")
            merged[eta] = merged.get(eta, 0.0) + w
        if p > 0:
            if not merged:
                raise ModelError("positive jump intensity needs at least one (weight, rate) pair")
            if abs(sum(merged.values()) - 1.0) > 1e-12:
                raise ModelError("jump weights must sum to 1")
        pairs = tuple((merged[eta], eta) for eta in sorted(merged))
        object.__setattr__(self, "drift_c", c)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "jump_intensity_p", p)
        object.__setattr__(self, "jump_rates", pairs if p > 0 else ())

    @classmethod
    def from_mu(cls, mu: float, sigma: float = 0.0, p: float = 0.0,
                jumps: Sequence[tuple[float, float]] = ()) -> "LevyModel":
        """Build from a surplus drift ``mu`` (the dual drift is ``-mu``)."""
        return cls(-float(mu), sigma, p, tuple(jumps))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.jump_rates])

    @property
    def rates(self) -> np.ndarray:
        return np.array([eta for _, eta in self.jump_rates])

    @property
    def bounded_variation(self) -> bool:
        return self.sigma == 0.0

    @property
    def pole(self) -> float:
        """Left end of the real analyticity domain of psi (minus the smallest rate)."""
        return -float(self.rates.min()) if self.jump_rates else -np.inf

    def psi(self, theta):
        th = np.asarray(theta, dtype=float)
        out = self.drift_c * th + 0.5 * self.sigma**2 * th**2
        for w, eta in self.jump_rates:
            out = out + self.jump_intensity_p * w * (eta / (eta + th) - 1.0)
        return out if out.ndim else float(out)

    def dpsi(self, theta):
        th = np.asarray(theta, dtype=float)
        out = self.drift_c + self.sigma**2 * th
        for w, eta in self.jump_rates:
            out = out - self.jump_intensity_p * w * eta / (eta + th) ** 2
        return out if np.ndim(out) else float(out)

    def d2psi(self, theta):
        th = np.asarray(theta, dtype=float)
        out = self.sigma**2 + 0.0 * th
        for w, eta in self.jump_rates:
            out = out + 2.0 * self.jump_intensity_p * w * eta / (eta + th) ** 3
        return out if np.ndim(out) else float(out)

    def dpsi0(self) -> float:
        """Right derivative of psi at 0."""
        return float(self.drift_c - self.jump_intensity_p * np.sum(self.weights / self.rates)) \
            if self.jump_rates else float(self.drift_c)

    def jump_density(self, z):
        """Lévy density of the upward jumps, ``p * sum w_k eta_k exp(-eta_k z)``."""
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for w, eta in self.jump_rates:
            out = out + self.jump_intensity_p * w * eta * np.exp(-eta * z)
        return out

    def characteristic_polynomial(self, q: float) -> Polynomial:
        """Numerator of ``psi(s) - q`` after multiplying by ``prod_k (eta_k + s)``."""
        base = Polynomial([-q - self.jump_intensity_p, self.drift_c, 0.5 * self.sigma**2])
        poles = [Polynomial([eta, 1.0]) for eta in self.rates]
        prod_all = Polynomial([1.0])
        for f in poles:
            prod_all = prod_all * f
        out = base * prod_all
        for k, (w, eta) in enumerate(self.jump_rates):
            rest = Polynomial([1.0])
            for j, f in enumerate(poles):
                if j != k:
                    rest = rest * f
            out = out + self.jump_intensity_p * w * eta * rest
        return out.trim()


def laplace_exponent(model: LevyModel, theta):
    return model.psi(theta)


def mean_increment(model: LevyModel) -> float:
    """E[X_1] = -psi'(0+)."""
    return -model.dpsi0()


@dataclass(frozen=True)
class RootSet:
    q: float
    roots: np.ndarray
    phi_q: float

    def residuals(self, model: LevyModel) -> np.ndarray:
        return np.abs(model.psi(self.roots) - self.q)


def _newton_polish(model: LevyModel, q: float, z: float, lo: float, hi: float) -> float:
    """Newton on psi - q, safeguarded to stay inside the pole-free interval (lo, hi)."""
    for _ in range(60):
        f = model.psi(z) - q
        step = f / model.dpsi(z)
        z_new = z - step
        if not (lo < z_new < hi):
            z_new = 0.5 * (z + (lo if z_new <= lo else hi))
        if abs(z_new - z) <= 4e-16 * max(1.0, abs(z)):
            return z_new
        z = z_new
    return z


def find_roots(model: LevyModel, q: float) -> RootSet:
    """All real roots of psi(s) = q, sorted ascending, with Phi_q the largest.

    The polynomial obtained by clearing the jump denominators is solved through
    its companion matrix; each real root is then polished with Newton on psi.
    """
    q = float(q)
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    poly = model.characteristic_polynomial(q)
    raw = poly.roots()
    scale = max(1.0, float(np.max(np.abs(raw))))
    real = np.sort(raw[np.abs(raw.imag) <= 1e-7 * scale].real)
    expected = len(model.jump_rates) + (2 if model.sigma > 0 else 1)
    if len(real) != expected:
        raise RootFindingError(
            f"expected {expected} real roots of psi(s)={q}, found {len(real)}")
    # each root sits between consecutive poles; use them as Newton safeguards
    walls = np.concatenate(([-np.inf], np.sort(-model.rates), [np.inf]))
    polished = []
    for z in real:
        k = np.searchsorted(walls, z) - 1
        lo, hi = walls[k], walls[k + 1]
        if z == lo or z == hi:
            raise RootFindingError("root coincides with a pole of psi")
        polished.append(_newton_polish(model, q, float(z), lo, hi))
    roots = np.array(sorted(polished))
    # near a pole psi is steep, so one ulp in the root already moves psi by |psi'| ulp
    tol = 1e-12 * max(1.0, q) + 4.0 * np.abs(model.dpsi(roots)) * np.spacing(np.abs(roots))
    res = np.abs(model.psi(roots) - q)
    if np.any(res > tol):
        raise RootFindingError(f"root residual {res.max():.3e} exceeds {tol:.1e}")
    if np.any(np.diff(roots) <= 0):
        raise RootFindingError("roots are not distinct")
    if not roots[-1] > 0:
        raise RootFindingError("largest root is not positive")
    return RootSet(q=q, roots=roots, phi_q=float(roots[-1]))
