from __future__ import annotations

import numpy as np
import pytest

from conftest import make_map
from poisdiv.auxctl import (AuxProblem, PayoffGrid, net_dividend_value, performance_J,
                            potential_measure, potential_until_ruin, ruin_laplace)
from poisdiv.levy import LevyModel, mean_increment
from poisdiv.mapctl import MapModel, SwitchJump
from poisdiv.scale import ScaleSet
from poisdiv.sim import (MCEstimate, SimConfig, _map_spec, _run, estimate_exit, sample_path,
                         simulate_controlled, simulate_double_barrier,
                         simulate_single_barrier_killed, simulate_uncontrolled)


def _bins_agree(measure, sample_prob, sample_se, edges, k=3.0):
    exact = np.array([measure.interval_mass(a, c) for a, c in zip(edges[:-1], edges[1:])])
    # an empty bin has zero sample spread; floor it so a tiny exact mass still passes
    se = np.maximum(sample_se, 1e-6)
    return np.abs(sample_prob - exact) <= k * se, exact


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_paths=1)
    with pytest.raises(ValueError):
        SimConfig(n_paths=11, antithetic=True)
    with pytest.raises(ValueError):
        SimConfig(euler_step=0.0)


def test_estimate_covers():
    est = MCEstimate(1.0, 0.1, 100)
    assert est.covers(1.29) and not est.covers(1.31)
    mean, se = est
    assert (mean, se) == (1.0, 0.1)


def test_seed_determinism(table1_map):
    cfg = SimConfig(seed=5, n_paths=3000, block_size=1000)
    a = _run(_map_spec(table1_map, [3.0, 4.0]), 1.0, 0, cfg)
    b = _run(_map_spec(table1_map, [3.0, 4.0]), 1.0, 0, cfg)
    for key in a:
        assert np.array_equal(a[key], b[key])
    c = _run(_map_spec(table1_map, [3.0, 4.0]), 1.0, 0, SimConfig(seed=6, n_paths=3000, block_size=1000))
    assert not np.array_equal(a["div"], c["div"])


def test_path_export_determinism(table1_map):
    cfg = SimConfig(seed=2, horizon_T=30.0)
    p1 = simulate_uncontrolled(table1_map, 1.0, 0, cfg)
    p2 = simulate_uncontrolled(table1_map, 1.0, 0, cfg)
    assert p1.rows() == p2.rows()


def test_no_observations_no_dividends(regime1, regime2):
    mp = make_map(regime1, regime2, gamma=1e-300)
    out = _run(_map_spec(mp, [1.0, 1.0]), 5.0, 0, SimConfig(seed=1, n_paths=5000))
    assert np.all(out["div"] == 0.0)
    assert np.all(out["n_obs"] == 0)


def test_negative_start_rejected(table1_map, aux1):
    cfg = SimConfig(n_paths=100)
    with pytest.raises(ValueError):
        simulate_controlled(table1_map, [3.0, 4.0], -0.1, 0, cfg)
    with pytest.raises(ValueError):
        simulate_double_barrier(aux1, -1.0, 3.0, cfg)
    with pytest.raises(ValueError):
        sample_path(table1_map, -1.0, 0, cfg, barriers=[3.0, 4.0])


def test_start_at_zero_has_no_initial_injection(table1_map):
    # pinned at 0 the path injects at rate c; there is no lump at time 0
    T = 1e-9
    rec = sample_path(table1_map, 0.0, 0, SimConfig(seed=4, horizon_T=T), barriers=[3.0, 4.0])
    assert rec.discounted_injections == pytest.approx(1.5 * T, rel=1e-6)


def test_controlled_path_never_negative(table1_map):
    rec = sample_path(table1_map, 2.0, 1, SimConfig(seed=8, horizon_T=200.0), barriers=[3.0, 4.0])
    assert min(rec.surplus) >= 0.0
    bars = [3.0, 4.0]
    for x, i, e in zip(rec.surplus, rec.regimes, rec.events):
        if e == "observe":
            assert x <= bars[i] + 1e-12
    assert rec.discounted_dividends > 0 and rec.discounted_injections > 0


def test_noiseless_path_is_piecewise_linear():
    m1, m2 = LevyModel(1.0), LevyModel(2.5)
    sj = SwitchJump()
    mp = MapModel((m1, m2), np.array([[-1.0, 1.0], [1.0, -1.0]]), ((sj, sj), (sj, sj)),
                  (0.1, 0.1), 0.5, 1.5)
    rec = simulate_uncontrolled(mp, 3.0, 0, SimConfig(seed=3, horizon_T=20.0))
    t, x, i = np.array(rec.times), np.array(rec.surplus), np.array(rec.regimes)
    slopes = np.array([1.0, 2.5])
    dt = np.diff(t)
    moving = dt > 0
    assert np.diff(x)[moving] == pytest.approx(-slopes[i[:-1][moving]] * dt[moving], abs=1e-9)
    assert set(rec.events) <= {"start", "drift", "observe", "switch", "end"}


def test_regime_drift_law_of_large_numbers(regime1, regime2):
    mp = make_map(regime1, regime2, switch_mean=0.0)
    rec = simulate_uncontrolled(mp, 0.0, 0, SimConfig(seed=12, horizon_T=2e5))
    t, x, i, ev = (np.array(rec.times), np.array(rec.surplus), np.array(rec.regimes),
                   np.array(rec.events))
    cuts = np.flatnonzero((ev == "switch") | (ev == "end"))
    starts = np.concatenate(([0], cuts[:-1]))
    seg_reg = i[starts]
    disp, dur = x[cuts] - x[starts], t[cuts] - t[starts]
    assert cuts.size > 5e4
    for k, model in enumerate((regime1, regime2)):
        sel = seg_reg == k
        D, L = disp[sel], dur[sel]
        rate = D.sum() / L.sum()
        se = np.sqrt(np.sum((D - rate * L) ** 2)) / L.sum()
        assert abs(rate - mean_increment(model)) <= 3 * se


@pytest.mark.parametrize("x,b", [(0.4, 1.5), (1.0, 2.0), (2.5, 3.0), (0.7, 5.0), (3.3, 6.0)])
def test_exit_estimates_match_scale(regime1, x, b):
    ss = ScaleSet.build(regime1, 0.35)
    down, up = estimate_exit(regime1, 0.35, x, b, SimConfig(seed=int(10 * x + b), n_paths=100_000))
    assert down.covers(ss.exit_down(x, b))
    assert up.covers(ss.exit_up(x, b))


def test_exit_edge_cases(regime1):
    cfg = SimConfig(seed=1, n_paths=20_000)
    down, up = estimate_exit(regime1, 0.35, 0.0, 2.0, cfg)
    assert down.mean == 1.0 and up.mean == 0.0
    down, up = estimate_exit(regime1, 0.35, 1.0, 200.0, cfg)
    assert up.mean == 0.0
    with pytest.raises(ValueError):
        estimate_exit(regime1, 0.35, 3.0, 2.0, cfg)


def test_exit_unbounded_variation(brownian_jump):
    ss = ScaleSet.build(brownian_jump, 0.4)
    cfg = SimConfig(seed=4, n_paths=40_000, euler_step=2e-4)
    down, up = estimate_exit(brownian_jump, 0.4, 1.0, 2.5, cfg)
    assert down.covers(ss.exit_down(1.0, 2.5), k=5.0)
    assert up.covers(ss.exit_up(1.0, 2.5), k=5.0)


def test_killed_process_ruin_transform(aux1):
    s = simulate_single_barrier_killed(aux1.model, aux1.q, aux1.gamma, 3.81, 2.0,
                                       SimConfig(seed=7, n_paths=200_000))
    assert s.ruin_laplace.covers(ruin_laplace(aux1, 2.0, 3.81))
    edges = np.linspace(0.0, 12.0, 21)
    prob, se = s.occupation(edges)
    ok, _ = _bins_agree(potential_until_ruin(aux1, 2.0, 3.81), prob, se, edges)
    assert ok.all()


def test_killed_process_small_start(aux1):
    s = simulate_single_barrier_killed(aux1.model, aux1.q, aux1.gamma, 3.81, 1e-6,
                                       SimConfig(seed=2, n_paths=20_000))
    assert s.ruin_laplace.mean > 0.999
    with pytest.raises(ValueError):
        simulate_single_barrier_killed(aux1.model, aux1.q, aux1.gamma, 3.81, 0.0, SimConfig())


def test_double_barrier_net_dividend(aux1):
    for x in (1.0, 3.81):
        s = simulate_double_barrier(aux1, x, 3.81, SimConfig(seed=int(x * 100), n_paths=200_000))
        assert s.value.covers(net_dividend_value(aux1, x, 3.81))


def test_double_barrier_with_payoff(aux1, concave_payoff):
    s = simulate_double_barrier(aux1, 2.0, 3.0, SimConfig(seed=17, n_paths=200_000), psi=concave_payoff)
    assert s.value.covers(performance_J(aux1, 2.0, concave_payoff, 3.0))
    assert s.ndv.covers(net_dividend_value(aux1, 2.0, 3.0))


def test_double_barrier_occupation(aux1):
    s = simulate_double_barrier(aux1, 1.0, 3.81, SimConfig(seed=19, n_paths=200_000))
    mu = potential_measure(aux1, 1.0, 3.81)
    at_zero = np.mean(s.terminal_x == 0.0)
    se0 = np.sqrt(at_zero * (1 - at_zero) / s.terminal_x.size)
    assert abs(at_zero - mu.atom0) <= 3 * se0
    edges = np.linspace(1e-12, 12.0, 21)
    prob, se = s.occupation(edges)
    ok, _ = _bins_agree(mu, prob, se, edges)
    assert ok.all()


def test_unbounded_variation_double_barrier(brownian_jump):
    aux = AuxProblem(brownian_jump, r=0.05, lam=0.4, gamma=0.5, phi=1.3)
    s = simulate_double_barrier(aux, 1.0, 2.0, SimConfig(seed=23, n_paths=20_000, euler_step=1e-3))
    # Euler reflection is biased; the documented band for sigma > 0 is 5 standard errors
    assert s.value.covers(net_dividend_value(aux, 1.0, 2.0), k=5.0)


def test_antithetic_consistent_with_plain(aux1):
    plain = simulate_double_barrier(aux1, 1.0, 3.0, SimConfig(seed=31, n_paths=100_000)).value
    anti = simulate_double_barrier(aux1, 1.0, 3.0, SimConfig(seed=32, n_paths=100_000, antithetic=True)).value
    assert abs(plain.mean - anti.mean) <= 3 * np.hypot(plain.stderr, anti.stderr)


def test_antithetic_pairs_are_mirrored(aux1):
    cfg = SimConfig(seed=3, n_paths=2000, antithetic=True, block_size=600)
    s = simulate_double_barrier(aux1, 1.0, 3.0, cfg)
    assert s.value.n == 1000
    assert s.terminal_x.size == 2000


def test_controlled_value_matches_map_solution(table1_map, table1_solution):
    est = simulate_controlled(table1_map, table1_solution.barriers, 0.0, 0,
                              SimConfig(seed=41, n_paths=400_000))
    assert est.covers(table1_solution.value(0.0, 0), k=3.0)


def test_flat_payoff_simulation_is_constant_shift(aux1):
    psi = PayoffGrid.linear(0.0, 2.0)
    cfg = SimConfig(seed=5, n_paths=5000)
    a = simulate_double_barrier(aux1, 1.0, 3.0, cfg)
    b = simulate_double_barrier(aux1, 1.0, 3.0, cfg, psi=psi)
    assert b.value.mean - a.value.mean == pytest.approx(2.0 * aux1.lam / aux1.q, abs=1e-9)
