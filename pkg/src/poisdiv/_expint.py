"""Exact integrals of piecewise-linear functions against exponentials."""

from __future__ import annotations

import numpy as np
from scipy.special import exprel


def exprel_h(r, h):
    """(exp(r h) - 1) / r, equal to h at r = 0."""
    return h * exprel(np.asarray(r, dtype=float) * h)


def _g2(z):
    """int_0^1 t exp(z t) dt, with a series near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    with np.errstate(over="ignore", invalid="ignore"):
        closed = (np.expm1(zs) * (zs - 1.0) + zs) / zs**2
    series = 0.5 + z / 3.0 + z**2 / 8.0 + z**3 / 30.0 + z**4 / 144.0
    return np.where(small, series, closed)


def lin_exp(a, s, r, h):
    """int_0^h (a + s t) exp(r t) dt."""
    h = np.asarray(h, dtype=float)
    return a * exprel_h(r, h) + s * h**2 * _g2(np.asarray(r, dtype=float) * h)


def exp_diff(a, b, x):
    """(exp(a x) - exp(b x)) / (a - b), finite when a == b."""
    return np.exp(b * x) * exprel_h(a - b, x)


class Piecewise:
    """Right-continuous piecewise-linear function on [x_0, inf).

    Cell ``i`` covers ``[x_i, x_{i+1})`` and holds ``left[i] + slope[i] * (y - x_i)``;
    the final cell ``[x_n, inf)`` is the linear tail.  Jumps at knots are allowed,
    which lets the same class carry both a payoff and its right derivative.
    """

    def __init__(self, knots, left, slope):
        self.knots = np.asarray(knots, dtype=float)
        self.left = np.asarray(left, dtype=float)
        self.slope = np.asarray(slope, dtype=float)
        if not (len(self.left) == len(self.slope) == len(self.knots)):
            raise ValueError("need one (left value, slope) pair per knot")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self._widths = np.diff(self.knots)
        self._cache: dict[tuple[float, bool], np.ndarray] = {}

    @classmethod
    def continuous(cls, xs, vals, tail_slope: float) -> "Piecewise":
        xs = np.asarray(xs, dtype=float)
        vals = np.asarray(vals, dtype=float)
        slopes = np.append(np.diff(vals) / np.diff(xs), tail_slope)
        return cls(xs, vals, slopes)

    def derivative(self) -> "Piecewise":
        """Right derivative as a step function."""
        return Piecewise(self.knots, self.slope, np.zeros_like(self.slope))

    def _cell(self, t):
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(idx, 0, len(self.knots) - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = self._cell(t)
        out = self.left[i] + self.slope[i] * (t - self.knots[i])
        return out if out.ndim else float(out)

    def _table(self, r: float, forward: bool) -> np.ndarray:
        """Knot values of the scaled running integral used for rate r.

        forward:  F(x_i) = int_{x_0}^{x_i} f(y) exp(r (y - x_i)) dy.
        backward: R(x_i) = int_{x_i}^{inf} f(y) exp(r (y - x_i)) dy  (r < 0 only).
        """
        key = (r, forward)
        tab = self._cache.get(key)
        if tab is not None:
            return tab
        n = len(self.knots)
        h = self._widths
        cells = lin_exp(self.left[:-1], self.slope[:-1], r, h)
        tab = np.empty(n)
        if forward:
            decay = np.exp(-r * h)
            tab[0] = 0.0
            for i in range(n - 1):
                tab[i + 1] = decay[i] * (tab[i] + cells[i])
        else:
            decay = np.exp(r * h)
            tab[-1] = -self.left[-1] / r + self.slope[-1] / r**2
            for i in range(n - 2, -1, -1):
                tab[i] = cells[i] + decay[i] * tab[i + 1]
        self._cache[key] = tab
        return tab

    def _forward(self, r, t):
        tab = self._table(r, True)
        i = self._cell(t)
        d = t - self.knots[i]
        return np.exp(-r * d) * (tab[i] + lin_exp(self.left[i], self.slope[i], r, d))

    def _backward(self, r, t):
        tab = self._table(r, False)
        i = self._cell(t)
        val_t = self.left[i] + self.slope[i] * (t - self.knots[i])
        last = i == len(self.knots) - 1
        nxt = np.minimum(i + 1, len(self.knots) - 1)
        d = np.where(last, 0.0, self.knots[nxt] - t)
        body = lin_exp(val_t, self.slope[i], r, d) + np.exp(r * d) * tab[nxt]
        tail = -val_t / r + self.slope[i] / r**2
        return np.where(last, tail, body)

    def exp_integral(self, r: float, lo, hi, anchor):
        """int_lo^hi f(y) exp(r (y - anchor)) dy, vectorised over lo, hi, anchor.

        ``hi`` may be ``inf`` when ``r < 0``.  Requires ``lo >= x_0``.
        """
        r = float(r)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        finite = bool(np.all(np.isfinite(hi)))
        if r >= 0 and not finite:
            raise ValueError("infinite upper limit needs a negative rate")
        # for r < 0 the forward difference cancels like exp(|r| span); the tail table
        # cancels like 1/(r span)^2, so switch where the two are comparable
        span = max(self.knots[-1], float(np.max(hi))) - self.knots[0] if finite else np.inf
        if r >= 0 or -r * span <= 1.0:
            out = np.exp(r * (hi - anchor)) * self._forward(r, hi) \
                - np.exp(r * (lo - anchor)) * self._forward(r, lo)
        else:
            fin = np.isfinite(hi)
            hi_f = np.where(fin, hi, lo)
            upper = np.where(fin, np.exp(r * (hi_f - anchor)) * self._backward(r, hi_f), 0.0)
            out = np.exp(r * (lo - anchor)) * self._backward(r, lo) - upper
        out = np.where(hi > lo, out, 0.0)
        return out if out.ndim else float(out)
