"""Independent quadrature oracles used only by the tests."""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad


def literal_performance(aux, x: float, b: float, psi) -> float:
    """Direct quadrature of the closed performance formula for 0 < x and a payoff
    whose right derivative vanishes beyond its last grid point."""
    if psi.tail_slope != 0:
        raise ValueError("oracle needs a payoff that is flat beyond its grid")
    ss, sg = aux.scale_q, aux.scale_g
    q, g, lam, phi = aux.q, aux.gamma, aux.lam, aux.phi
    Phi = sg.phi_q
    u = b - x
    Z2u, Z2b = ss.Z2(u, Phi), ss.Z2(b, Phi)
    kinks = list(psi.xs)

    def quad_pts(f, lo, hi):
        pts = [k for k in kinks if lo < k < hi]
        return quad(f, lo, hi, points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-12)[0]

    dpsi = lambda y: float(psi.right_derivative(y))  # noqa: E731
    val = -g * (ss.Zbar(u) + aux.model.dpsi0() / q) / (q + g)
    val += (g * ss.Z(b) - phi * (q + g)) * (Z2u + g / q * ss.Z(u)) / ((q + g) * Phi * Z2b)
    val += lam * float(psi(b)) / q * ss.Z(u)
    val -= lam * quad_pts(lambda y: float(psi(y)) * ss.W(y - x), max(x, 0.0), b) if x < b else 0.0
    pre = (q * Z2u + g * ss.Z(u)) / (q * Phi * Z2b)
    inner = lam * quad_pts(lambda y: dpsi(y) * ss.W(y), 0.0, b)
    denom = q * Z2u + g * ss.Z(u)

    def tail(y):
        conv_w = quad(lambda z: ss.W(b + y - z) * sg.W(z), 0.0, y, epsabs=1e-13)[0] if y > 0 else 0.0
        conv_z = quad(lambda z: ss.Z(u + y - z) * sg.W(z), 0.0, y, epsabs=1e-13)[0] if y > 0 else 0.0
        br = ss.W(b + y) + g * conv_w - Phi * Z2b * (ss.Z(u + y) + g * conv_z) / denom
        return dpsi(b + y) * br

    top = psi.xs[-1] - b
    if top > 0:
        pts = [k - b for k in kinks if 0 < k - b < top]
        inner += lam * quad(tail, 0.0, top, points=pts or None, limit=400, epsabs=1e-12)[0]
    return float(val - pre * inner)
