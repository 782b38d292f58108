from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from oracles import literal_performance
from poisdiv.auxctl import (AuxProblem, PayoffError, PayoffGrid, dJ_at_b, dJ_dx, find_b_psi,
                            net_dividend_value, performance_J, performance_J_derivs,
                            potential_measure, potential_until_ruin, ruin_laplace, verify_hjb)
from poisdiv.levy import LevyModel


@pytest.fixture(scope="module")
def b_opt(aux1, concave_payoff):
    return find_b_psi(aux1, concave_payoff)


@pytest.fixture(scope="module")
def aux_bm(brownian_jump):
    return AuxProblem(brownian_jump, r=0.05, lam=0.4, gamma=0.5, phi=1.3)


def _random_flat_tail_payoff(rng, phi):
    xs = np.linspace(0.0, rng.uniform(4.0, 10.0), int(rng.integers(5, 30)))
    slopes = np.sort(rng.uniform(0.0, phi, len(xs) - 1))[::-1]
    vals = rng.uniform(-1.0, 1.0) + np.concatenate(([0.0], np.cumsum(slopes * np.diff(xs))))
    return PayoffGrid(xs, vals, 0.0)


# ruin transform

def test_ruin_laplace_at_zero_is_one(aux1):
    assert ruin_laplace(aux1, 0.0, 3.81) == pytest.approx(1.0, abs=1e-14)
    assert ruin_laplace(aux1, 1e-9, 3.81) == pytest.approx(1.0, abs=1e-8)


def test_ruin_laplace_at_barrier_closed_form(aux1):
    ss, g, q = aux1.scale_q, aux1.gamma, aux1.q
    Phi = aux1.scale_g.phi_q
    b = 3.81
    expected = (g + q) / (g * ss.Z(b) + q * ss.Z2(b, Phi))
    assert ruin_laplace(aux1, b, b) == pytest.approx(expected, rel=1e-13)
    assert ruin_laplace(aux1, b, b) == pytest.approx(0.318033, abs=1e-6)


def test_ruin_laplace_decreases_in_barrier(aux1):
    vals = [ruin_laplace(aux1, 1.5, b) for b in (2.0, 4.0, 8.0, 16.0)]
    assert np.all(np.diff(vals) < 0)
    assert all(0.0 < v < 1.0 for v in vals)


def test_ruin_laplace_vectorised(aux1):
    xs = np.array([0.5, 1.0, 5.0])
    assert ruin_laplace(aux1, xs, 3.0) == pytest.approx([ruin_laplace(aux1, x, 3.0) for x in xs])


def test_barrier_must_be_positive(aux1):
    with pytest.raises(ValueError):
        ruin_laplace(aux1, 1.0, 0.0)
    with pytest.raises(ValueError):
        potential_measure(aux1, -1.0, 2.0)


# potential measures

@pytest.mark.parametrize("x,b", [(2.0, 3.81), (0.3, 1.0), (6.0, 3.81), (3.81, 3.81)])
def test_killed_measure_mass(aux1, x, b):
    mu = potential_until_ruin(aux1, x, b)
    assert mu.atom0 == 0.0
    assert mu.total_mass() == pytest.approx(1.0 - ruin_laplace(aux1, x, b), abs=1e-10)


@pytest.mark.parametrize("x,b", [(1.0, 3.81), (0.0, 2.0), (5.0, 2.0), (2.0, 2.0)])
def test_reflected_measure_mass(aux1, x, b):
    assert potential_measure(aux1, x, b).total_mass() == pytest.approx(1.0, abs=1e-10)


def test_measure_mass_unbounded_variation(aux_bm):
    mu = potential_measure(aux_bm, 1.0, 2.5)
    assert mu.atom0 == 0.0
    assert mu.total_mass() == pytest.approx(1.0, abs=1e-9)
    killed = potential_until_ruin(aux_bm, 1.0, 2.5)
    assert killed.total_mass() == pytest.approx(1.0 - ruin_laplace(aux_bm, 1.0, 2.5), abs=1e-9)


def test_atom_at_zero_bounded_variation(aux1):
    mu = potential_measure(aux1, 1.0, 3.81)
    assert mu.atom0 > 0


@pytest.mark.parametrize("x", [0.5, 2.0, 3.81, 7.0])
def test_densities_non_negative(aux1, x):
    ys = np.linspace(1e-3, 40.0, 200)
    assert np.all(potential_until_ruin(aux1, x, 3.81).density(ys) >= -1e-14)
    assert np.all(potential_measure(aux1, x, 3.81).density(ys) >= -1e-14)


def test_interval_mass_matches_quadrature(aux1):
    mu = potential_measure(aux1, 1.0, 3.81)
    ref = quad(mu.density, 0.5, 6.0, points=[1.0, 3.81])[0]
    assert mu.interval_mass(0.5, 6.0) == pytest.approx(ref, rel=1e-9)


def test_integrate_matches_quadrature(aux1, concave_payoff):
    mu = potential_measure(aux1, 2.0, 3.81)
    f = concave_payoff
    edges = np.unique(np.concatenate((f.xs, [2.0, 3.81], np.arange(25.0, 201.0, 5.0))))
    ref = mu.atom0 * f(0.0) + sum(quad(lambda y: f(y) * mu.density(y), lo, hi, epsabs=1e-14)[0]
                                  for lo, hi in zip(edges[:-1], edges[1:]))
    assert mu.integrate(f.fn) == pytest.approx(ref, rel=1e-10)


# net dividend value

def test_ndv_monotone_in_phi(regime1):
    vals = [net_dividend_value(AuxProblem(regime1, 0.05, 0.3, 0.3, phi), 1.0, 3.81)
            for phi in (1.05, 1.5, 2.0)]
    assert vals[0] >= vals[1] >= vals[2]


def test_ndv_linear_below_zero(aux1):
    v0 = net_dividend_value(aux1, 0.0, 3.0)
    assert net_dividend_value(aux1, -2.0, 3.0) == pytest.approx(v0 - 2.0 * aux1.phi)


def test_ndv_continuous_at_zero_and_barrier(aux1):
    b = 3.0
    assert net_dividend_value(aux1, 1e-9, b) == pytest.approx(net_dividend_value(aux1, 0.0, b), abs=1e-8)
    assert net_dividend_value(aux1, b - 1e-9, b) == pytest.approx(net_dividend_value(aux1, b + 1e-9, b),
                                                                    abs=1e-8)


# performance function

def test_zero_payoff_reduces_to_ndv(aux1):
    xs = np.array([0.0, 0.7, 3.81, 9.0])
    J = performance_J(aux1, xs, PayoffGrid.zero(), 3.81)
    assert J == pytest.approx(net_dividend_value(aux1, xs, 3.81), abs=1e-13)


def test_linear_payoff_adds_measure_mean(aux1):
    # Psi(y) = 1 contributes exactly lam / q because the reflected measure has unit mass
    one = PayoffGrid.linear(0.0, 1.0)
    J = performance_J(aux1, 2.0, one, 3.81)
    assert J - net_dividend_value(aux1, 2.0, 3.81) == pytest.approx(aux1.lam / aux1.q, abs=1e-10)


def test_literal_formula_at_random_triples(aux1):
    rng = np.random.default_rng(11)
    for _ in range(10):
        psi = _random_flat_tail_payoff(rng, aux1.phi)
        b = rng.uniform(0.5, 6.0)
        x = rng.uniform(0.05, 1.5 * b)
        got = performance_J(aux1, x, psi, b)
        assert got == pytest.approx(literal_performance(aux1, x, b, psi), rel=1e-6)


def test_J_linear_below_zero(aux1, concave_payoff):
    J0 = performance_J(aux1, 0.0, concave_payoff, 3.0)
    assert performance_J(aux1, -1.5, concave_payoff, 3.0) == pytest.approx(J0 - 1.5 * aux1.phi)


def test_J_derivatives_against_finite_differences(aux1, concave_payoff):
    # points sit between payoff knots, where J is twice differentiable
    h = 1e-5
    for x in (0.71, 2.23, 4.61, 8.33):
        J, J1, J2 = performance_J_derivs(aux1, x, concave_payoff, 3.5)
        lo, hi = performance_J(aux1, x - h, concave_payoff, 3.5), performance_J(aux1, x + h, concave_payoff, 3.5)
        assert J1 == pytest.approx((hi - lo) / (2 * h), abs=1e-6)
        assert J2 == pytest.approx((hi - 2 * J + lo) / h**2, abs=1e-3)


# barrier derivative and optimal barrier

def test_dJ_at_b_matches_numeric_slope(aux1, concave_payoff):
    for b in (1.0, 3.0, 6.0):
        h = 1e-6
        right = (performance_J(aux1, b + h, concave_payoff, b) - performance_J(aux1, b, concave_payoff, b)) / h
        assert dJ_at_b(aux1, b, concave_payoff) == pytest.approx(right, abs=1e-4)


def test_bracket_with_unit_slope_payoff(aux1):
    from poisdiv.auxctl import _bracket
    psi = PayoffGrid.linear(1.0, 0.0)
    b = 2.5
    R = ruin_laplace(aux1, b, b)
    expectation = (aux1.q * aux1.phi - aux1.lam) / aux1.q * (1.0 - R)
    assert _bracket(aux1, psi, b)[0] == pytest.approx(aux1.phi - 1.0 - expectation, abs=1e-12)


def test_bracket_limits(aux1, concave_payoff):
    from poisdiv.auxctl import _bracket
    assert _bracket(aux1, concave_payoff, 1e-9)[0] == pytest.approx(aux1.phi - 1.0, abs=1e-6)
    far = _bracket(aux1, concave_payoff, 150.0)[0]
    assert far == pytest.approx(aux1.lam * concave_payoff.tail_slope / aux1.q - 1.0, abs=1e-3)
    assert far < 0


def test_bracket_non_increasing(aux1, concave_payoff):
    from poisdiv.auxctl import _bracket
    vals = [_bracket(aux1, concave_payoff, b)[0] for b in np.linspace(0.1, 30.0, 40)]
    assert np.all(np.diff(vals) <= 1e-12)


def test_b_psi_slope_is_one(aux1, concave_payoff, b_opt):
    assert 0 < b_opt < 1e3
    assert dJ_at_b(aux1, b_opt, concave_payoff) == pytest.approx(1.0, abs=1e-6)
    assert dJ_dx(aux1, b_opt, b_opt, concave_payoff) == pytest.approx(1.0, abs=1e-6)


def test_b_psi_increases_with_phi(regime1, concave_payoff):
    bs = [find_b_psi(AuxProblem(regime1, 0.05, 0.3, 0.3, phi), concave_payoff) for phi in (1.5, 2.0)]
    assert bs[1] > bs[0]


def test_slope_ranges(aux1, concave_payoff, b_opt):
    below = np.linspace(0.01, b_opt, 52)[1:-1]
    above = np.linspace(b_opt, 4 * b_opt, 50)
    s_below = np.array([dJ_dx(aux1, x, b_opt, concave_payoff) for x in below])
    s_above = np.array([dJ_dx(aux1, x, b_opt, concave_payoff) for x in above])
    assert np.all((s_below >= 1 - 1e-6) & (s_below <= aux1.phi + 1e-6))
    assert np.all((s_above >= -1e-6) & (s_above <= 1 + 1e-6))


def test_dJ_dx_matches_finite_difference(aux1, concave_payoff, b_opt):
    h = 1e-5
    for x in np.linspace(0.1, 2 * b_opt, 10):
        fd = (performance_J(aux1, x + h, concave_payoff, b_opt)
              - performance_J(aux1, x - h, concave_payoff, b_opt)) / (2 * h)
        assert dJ_dx(aux1, x, b_opt, concave_payoff) == pytest.approx(fd, abs=1e-3)


def test_dJ_dx_needs_positive_x(aux1, concave_payoff, b_opt):
    with pytest.raises(ValueError):
        dJ_dx(aux1, 0.0, b_opt, concave_payoff)


def test_optimal_J_is_concave(aux1, concave_payoff, b_opt):
    xs = np.linspace(0.0, 3 * b_opt, 200)
    J = performance_J(aux1, xs, concave_payoff, b_opt)
    assert np.max(np.diff(J, 2)) <= 1e-8


def test_optimal_barrier_dominates_perturbed_barriers(aux1, concave_payoff, b_opt):
    xs = np.array([0.0, 0.5 * b_opt, b_opt, 1.5 * b_opt, 3 * b_opt])
    best = performance_J(aux1, xs, concave_payoff, b_opt)
    for factor in (0.5, 0.8, 1.25, 2.0):
        other = performance_J(aux1, xs, concave_payoff, factor * b_opt)
        assert np.all(best >= other - 1e-6)


def test_hjb_at_optimal_barrier(aux1, concave_payoff, b_opt):
    grid = np.linspace(0.02, 3 * b_opt, 200)
    grid = grid[np.abs(grid - b_opt) > 1e-9]
    rep = verify_hjb(aux1, b_opt, concave_payoff, grid)
    assert rep.below_residual <= 1e-6 and rep.above_residual <= 1e-6
    assert rep.sup_mismatch <= 1e-6
    assert rep.slope_excess <= 1e-6
    assert rep.argmax_ok
    assert rep.ok()


def test_hjb_unbounded_variation(aux_bm, concave_payoff):
    b = find_b_psi(aux_bm, concave_payoff)
    grid = np.linspace(0.05, 2.5 * b, 40)
    rep = verify_hjb(aux_bm, b, concave_payoff, grid[np.abs(grid - b) > 1e-9])
    assert rep.ok(1e-6)


def test_hjb_rejects_grid_on_barrier(aux1, concave_payoff):
    with pytest.raises(ValueError):
        verify_hjb(aux1, 2.0, concave_payoff, [1.0, 2.0])


def test_suboptimal_barrier_breaks_sup_structure(aux1, concave_payoff, b_opt):
    grid = np.linspace(0.1, 2 * b_opt, 30)
    rep = verify_hjb(aux1, 0.5 * b_opt, concave_payoff, grid[np.abs(grid - 0.5 * b_opt) > 1e-9])
    assert not rep.ok()


# payoff grid validation

@pytest.mark.parametrize("xs,vals,tail", [
    ([0.0, 1.0, 2.0], [0.0, 1.0, 3.0], 0.5),
    ([0.5, 1.0], [0.0, 1.0], 0.5),
    ([0.0, 1.0, 1.0], [0.0, 1.0, 1.5], 0.5),
    ([0.0, 1.0], [0.0, 1.0], 1.5),
    ([0.0, 1.0], [0.0, np.nan], 0.0),
    ([0.0], [0.0], 0.0),
])
def test_payoff_grid_rejects(xs, vals, tail):
    with pytest.raises(PayoffError):
        PayoffGrid(np.array(xs), np.array(vals), tail)


def test_payoff_grid_right_derivative(concave_payoff):
    assert concave_payoff.right_derivative(25.0) == pytest.approx(0.3)
    k = concave_payoff.xs[3]
    assert concave_payoff.right_derivative(k) == pytest.approx(concave_payoff.chord_slopes[3])


def test_aux_problem_validation(regime1):
    with pytest.raises(ValueError):
        AuxProblem(regime1, 0.05, 0.3, 0.3, 1.0)
    with pytest.raises(ValueError):
        AuxProblem(regime1, 0.0, 0.3, 0.3, 1.5)
    assert AuxProblem(regime1, 0.05, 0.3, 0.3, 1.5).q == pytest.approx(0.35)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 8.0), st.floats(0.2, 8.0))
def test_J_slope_bounded_by_phi(x, b):
    model = LevyModel(1.2, 0.0, 0.4, ((1.0, 0.5),))
    aux = AuxProblem(model, 0.05, 0.3, 0.4, 1.4)
    psi = PayoffGrid.linear(0.6, 0.2)
    J1 = performance_J_derivs(aux, x, psi, b)[1]
    assert -1e-9 <= J1 <= aux.phi + 1e-9
