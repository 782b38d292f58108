"""Scale functions of a spectrally positive Lévy model in exponential-sum form.

With roots ``zeta_k`` of ``psi(s) = q`` and ``A_k = 1 / psi'(zeta_k)`` the partial
fraction expansion of ``1 / (psi(s) - q)`` gives ``W_q(x) = sum_k A_k exp(zeta_k x)``.
Every other quantity here is an exact term-wise antiderivative of that sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._expint import exp_diff, exprel_h
from .levy import LevyModel, RootSet, find_roots


def _ret(v):
    return v if np.ndim(v) else float(v)


@dataclass(frozen=True)
class ScaleSet:
    model: LevyModel
    q: float
    roots: RootSet
    coeffs: np.ndarray

    @classmethod
    def build(cls, model: LevyModel, q: float) -> "ScaleSet":
        rs = find_roots(model, q)
        coeffs = 1.0 / model.dpsi(rs.roots)
        return cls(model=model, q=float(q), roots=rs, coeffs=np.asarray(coeffs))

    @property
    def zeta(self) -> np.ndarray:
        return self.roots.roots

    @property
    def phi_q(self) -> float:
        return self.roots.phi_q

    @property
    def bv_flag(self) -> bool:
        return self.model.bounded_variation

    @property
    def cbar(self) -> float:
        return self.model.drift_c

    @property
    def W0(self) -> float:
        """W_q(0+): 1/c in the bounded-variation case, 0 otherwise."""
        return 1.0 / self.cbar if self.bv_flag else 0.0

    def _sum(self, x, weights, kernel):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)[..., None]
        return np.sum(weights * kernel(xp), axis=-1)

    def W(self, x):
        x = np.asarray(x, dtype=float)
        val = self._sum(x, self.coeffs, lambda t: np.exp(self.zeta * t))
        return _ret(np.where(x < 0, 0.0, val))

    def W_prime(self, x):
        """Derivative of W_q for x > 0 (left and right agree in the rational case)."""
        x = np.asarray(x, dtype=float)
        val = self._sum(x, self.coeffs * self.zeta, lambda t: np.exp(self.zeta * t))
        return _ret(np.where(x < 0, 0.0, val))

    W_prime_right = W_prime
    W_prime_left = W_prime

    def W_second(self, x):
        x = np.asarray(x, dtype=float)
        val = self._sum(x, self.coeffs * self.zeta**2, lambda t: np.exp(self.zeta * t))
        return _ret(np.where(x < 0, 0.0, val))

    def Z(self, x):
        """Z_q(x) = 1 + q int_0^x W_q."""
        x = np.asarray(x, dtype=float)
        val = 1.0 + self.q * self._sum(x, self.coeffs, lambda t: exprel_h(self.zeta, t))
        return _ret(np.where(x <= 0, 1.0, val))

    def Zbar(self, x):
        """Antiderivative of Z_q vanishing at 0; equals x for x <= 0."""
        x = np.asarray(x, dtype=float)
        z = self.zeta

        def kern(t):
            # int_0^t (exp(z u) - 1)/z du, written to stay finite as z -> 0
            return (exprel_h(z, t) - t) / z

        val = x + self.q * self._sum(x, self.coeffs, kern)
        return _ret(np.where(x <= 0, x, val))

    def Z2(self, x, s: float):
        """Second scale function Z_q(x, s) via its finite-integral form."""
        x = np.asarray(x, dtype=float)
        s = float(s)
        kappa = self.model.psi(s) - self.q
        if s > self.phi_q * (1.0 + 1e-8) + 1e-12:
            # the exp(s x) coefficient is 1 - kappa * laplace_W(s) = 0; dropping it
            # avoids cancelling two quantities of size exp(s x)
            val = self._sum(x, kappa * self.coeffs / (s - self.zeta), lambda t: np.exp(self.zeta * t))
            return _ret(np.where(x < 0, np.exp(s * x), val))
        # int_0^x exp(-s y) W_q(y) dy = sum_k A_k exprel(zeta_k - s, x)
        integral = self._sum(x, self.coeffs, lambda t: exprel_h(self.zeta - s, t))
        val = np.exp(s * np.maximum(x, 0.0)) * (1.0 - kappa * integral)
        return _ret(np.where(x < 0, np.exp(s * x), val))

    def Z2_dx(self, x, s: float):
        """d/dx Z_q(x, s) = s Z_q(x, s) - (psi(s) - q) W_q(x)."""
        return _ret(s * np.asarray(self.Z2(x, s)) - (self.model.psi(s) - self.q) * np.asarray(self.W(x)))

    def laplace_W(self, s):
        """int_0^inf exp(-s x) W_q(x) dx, closed form for s > Phi_q."""
        s = np.asarray(s, dtype=float)
        return _ret(np.sum(self.coeffs / (s[..., None] - self.zeta), axis=-1))

    def exit_down(self, x, b):
        """E_x[exp(-q tau_0^-); tau_0^- < tau_b^+] = W_q(b - x) / W_q(b)."""
        _check_exit(x, b)
        return _ret(np.asarray(self.W(np.asarray(b) - x)) / self.W(b))

    def exit_up(self, x, b):
        """E_x[exp(-q tau_b^+); tau_b^+ < tau_0^-] = Z_q(b-x) - Z_q(b) W_q(b-x) / W_q(b)."""
        _check_exit(x, b)
        bx = np.asarray(b) - x
        return _ret(np.asarray(self.Z(bx)) - self.Z(b) * np.asarray(self.W(bx)) / self.W(b))


def _check_exit(x, b) -> None:
    x = np.asarray(x, dtype=float)
    if not np.all(b > 0):
        raise ValueError("exit identities need b > 0")
    if np.any(x < 0) or np.any(x > b):
        raise ValueError("exit identities need 0 <= x <= b")


def conv_WW(s1: ScaleSet, s2: ScaleSet, shift: float, upper: float) -> float:
    """int_0^upper W_1(z + shift) W_2(upper - z) dz for shift >= 0, upper >= 0."""
    if upper <= 0:
        return 0.0
    a = s1.coeffs[:, None] * s2.coeffs[None, :]
    za, zb = s1.zeta[:, None], s2.zeta[None, :]
    return float(np.sum(a * np.exp(za * shift) * exp_diff(za, zb, upper)))


def convolve_identity_check(set_p: ScaleSet, set_q: ScaleSet, x: float, y: float) -> float:
    """Residual of the two-level convolution identity for W at levels p and q.

    W_q(x+y) - (q-p) int_0^x W_q(z+y) W_p(x-z) dz
        - [W_p(x+y) + (q-p) int_0^y W_p(x+y-z) W_q(z) dz]
    """
    if set_p.model != set_q.model:
        raise ValueError("both scale sets must come from the same model")
    dq = set_q.q - set_p.q
    if dq == 0.0:
        return 0.0
    lhs = set_q.W(x + y) - dq * conv_WW(set_q, set_p, y, x)
    # int_0^y W_p(x+y-z) W_q(z) dz = int_0^y W_p(x + u) W_q(y - u) du
    rhs = set_p.W(x + y) + dq * conv_WW(set_p, set_q, x, y)
    return float(lhs - rhs)
