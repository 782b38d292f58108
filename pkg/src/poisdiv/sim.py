"""Event-driven Monte-Carlo simulation of the controlled and uncontrolled surplus.

Discounting at rate ``r`` is realised as killing at an independent exponential time:
``E[int_0^inf e^{-rt} dA_t] = E[A_{e_r}]``.  Every estimator therefore runs paths
until a kill event, with no horizon truncation.  Between events a ``sigma = 0``
path moves linearly, so reflection at 0 and first passage below 0 are exact;
``sigma > 0`` regimes fall back to Euler steps of length ``euler_step``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .levy import LevyModel

_U_LO = 2.0**-53
_U_HI = 1.0 - 2.0**-53

ALIVE, KILLED, RUINED, EXITED_UP = 0, 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo settings.

    ``horizon_T`` is only used for single-path trajectory export; estimators kill
    paths at the discount rate instead of truncating time.
    """

    seed: int = 0
    n_paths: int = 100_000
    horizon_T: float = 50.0
    euler_step: float = 1e-3
    antithetic: bool = False
    block_size: int = 1 << 17

    def __post_init__(self) -> None:
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if not (self.euler_step > 0 and self.horizon_T > 0):
            raise ValueError("euler_step and horizon_T must be positive")


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int

    def covers(self, value: float, k: float = 3.0) -> bool:
        return abs(value - self.mean) <= k * self.stderr + 1e-12 * max(1.0, abs(value))

    def __iter__(self):
        yield self.mean
        yield self.stderr


def _estimate(samples: np.ndarray, antithetic: bool) -> MCEstimate:
    """Mean with standard error; antithetic pairs (i, i + n/2) are averaged first."""
    samples = np.asarray(samples, dtype=float)
    if antithetic:
        h = samples.size // 2
        samples = 0.5 * (samples[:h] + samples[h:])
    n = samples.size
    return MCEstimate(float(np.mean(samples)), float(np.std(samples, ddof=1) / np.sqrt(n)), n)


@dataclass
class _Spec:
    """Flattened per-regime parameters for the vectorised engine."""

    c: np.ndarray
    sigma: np.ndarray
    p: np.ndarray
    jump_cum: np.ndarray
    jump_rate: np.ndarray
    gamma: float
    kill: np.ndarray
    lam: np.ndarray
    switch_cum: np.ndarray
    switch_mean: np.ndarray
    barrier: np.ndarray
    boundary: str = "reflect"  # reflect | ruin | free
    up_level: float = np.inf
    mode: str = "barrier"
    reward: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    @classmethod
    def from_models(cls, models: Sequence[LevyModel], **kw) -> "_Spec":
        R = len(models)
        K = max(1, max(len(m.jump_rates) for m in models))
        jump_cum = np.ones((R, K))
        jump_rate = np.ones((R, K))
        p = np.zeros(R)
        for i, m in enumerate(models):
            if m.jump_rates:
                k = len(m.jump_rates)
                jump_cum[i, :k] = np.cumsum(m.weights)
                jump_rate[i, :k] = m.rates
                jump_rate[i, k:] = m.rates[-1]
                p[i] = m.jump_intensity_p
        kw.setdefault("lam", np.zeros(R))
        kw.setdefault("switch_cum", np.ones((R, R)))
        kw.setdefault("switch_mean", np.zeros((R, R)))
        return cls(c=np.array([m.drift_c for m in models]),
                   sigma=np.array([m.sigma for m in models]),
                   p=p, jump_cum=jump_cum, jump_rate=jump_rate, **kw)


def _uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    return np.clip(rng.random(shape), _U_LO, _U_HI)


def _run_block(spec: _Spec, x0: float, i0: int, n: int, rng: np.random.Generator,
               antithetic: bool, euler_step: float) -> dict[str, np.ndarray]:
    x = np.full(n, float(x0))
    reg = np.full(n, int(i0), dtype=np.int64)
    div = np.zeros(n)
    inj = np.zeros(n)
    bonus = np.zeros(n)
    status = np.zeros(n, dtype=np.int8)
    n_obs = np.zeros(n, dtype=np.int64)
    anchor = x.copy()
    runmax = np.zeros(n)
    half = n // 2 if antithetic else n
    total_rate = spec.p + spec.gamma + spec.lam + spec.kill

    while True:
        pair_live = status[:half] == ALIVE
        if antithetic:
            pair_live |= status[half:] == ALIVE
        pidx = np.flatnonzero(pair_live)
        if pidx.size == 0:
            break
        u = _uniforms(rng, (pidx.size, 4))
        if antithetic:
            idx = np.concatenate((pidx, pidx + half))
            u = np.concatenate((u, 1.0 - u))
            keep = status[idx] == ALIVE
            idx, u = idx[keep], u[keep]
        else:
            idx = pidx
        r = reg[idx]
        tau = -np.log(u[:, 0]) / total_rate[r]
        xi = x[idx]

        # drift (and diffusion) until the next event
        stopped = np.zeros(idx.size, dtype=bool)
        smooth = spec.sigma[r] == 0
        if np.any(smooth):
            y = xi[smooth] - spec.c[r[smooth]] * tau[smooth]
            if spec.boundary == "reflect":
                inj[idx[smooth]] += np.maximum(-y, 0.0)
                xi[smooth] = np.maximum(y, 0.0)
            elif spec.boundary == "free":
                xi[smooth] = y
            else:
                ruin = y < 0
                sub = np.flatnonzero(smooth)
                stopped[sub[ruin]] = True
                status[idx[sub[ruin]]] = RUINED
                xi[smooth] = y
        rough = np.flatnonzero(~smooth)
        if rough.size:
            stop_r = _euler(spec, xi, r, tau, rough, idx, inj, status, rng, euler_step)
            stopped[rough[stop_r]] = True

        v = u[:, 1] * total_rate[r]
        p = spec.p[r]
        is_jump = (v < p) & ~stopped
        is_obs = (v >= p) & (v < p + spec.gamma) & ~stopped
        is_switch = (v >= p + spec.gamma) & (v < p + spec.gamma + spec.lam[r]) & ~stopped
        is_kill = (v >= p + spec.gamma + spec.lam[r]) & ~stopped

        if np.any(is_jump):
            rj = r[is_jump]
            k = np.sum(spec.jump_cum[rj] < u[is_jump, 3][:, None], axis=1)
            k = np.minimum(k, spec.jump_cum.shape[1] - 1)
            xi[is_jump] += -np.log(u[is_jump, 2]) / spec.jump_rate[rj, k]
        if np.any(is_switch):
            rs = r[is_switch]
            tgt = np.sum(spec.switch_cum[rs] < u[is_switch, 3][:, None], axis=1)
            tgt = np.minimum(tgt, spec.switch_cum.shape[1] - 1)
            xi[is_switch] += spec.switch_mean[rs, tgt] * -np.log(u[is_switch, 2])
            if spec.boundary == "reflect":
                deficit = np.maximum(-xi[is_switch], 0.0)
                inj[idx[is_switch]] += deficit
                xi[is_switch] += deficit
            reg[idx[is_switch]] = tgt
        if spec.mode == "upper":
            moved = is_jump | is_switch
            gi = idx[moved]
            runmax[gi] = np.maximum(runmax[gi], xi[moved] - anchor[gi])
        if np.any(is_obs):
            oi = idx[is_obs]
            first = n_obs[oi] == 0
            bonus[oi[first]] = 1.0
            if spec.mode == "barrier":
                b = spec.barrier[r[is_obs]]
                div[oi] += np.maximum(xi[is_obs] - b, 0.0)
                xi[is_obs] = np.minimum(xi[is_obs], b)
            elif spec.mode == "upper":
                div[oi] += runmax[oi]
                runmax[oi] = 0.0
                anchor[oi] = xi[is_obs]
            elif spec.mode == "lower":
                pay = np.where(first, xi[is_obs], 0.0)
                div[oi] += pay
                xi[is_obs] -= pay
            n_obs[oi] += 1
        if np.isfinite(spec.up_level):
            up = (xi >= spec.up_level) & ~stopped & ~is_kill
            status[idx[up]] = EXITED_UP
            stopped |= up
            is_kill &= ~up
        if np.any(is_kill):
            ki = idx[is_kill]
            status[ki] = KILLED
            if spec.reward is not None:
                bonus_r = spec.reward(xi[is_kill], r[is_kill])
                div[ki] += bonus_r
        x[idx] = xi

    return {"x": x, "reg": reg, "div": div, "inj": inj, "status": status,
            "first_obs": bonus, "n_obs": n_obs}


def _euler(spec: _Spec, xi, r, tau, rough, idx, inj, status, rng, dt) -> np.ndarray:
    """Euler steps over tau for the sigma > 0 paths in ``rough``; returns stopped mask."""
    xs = xi[rough].copy()
    rem = tau[rough].copy()
    c = spec.c[r[rough]]
    sg = spec.sigma[r[rough]]
    stop = np.zeros(rough.size, dtype=bool)
    live = rem > 0
    while np.any(live):
        w = np.flatnonzero(live)
        h = np.minimum(dt, rem[w])
        xs[w] += -c[w] * h + sg[w] * np.sqrt(h) * rng.standard_normal(w.size)
        rem[w] -= h
        neg = xs[w] < 0
        if spec.boundary == "reflect":
            inj[idx[rough[w[neg]]]] += -xs[w[neg]]
            xs[w[neg]] = 0.0
        elif spec.boundary == "ruin":
            stop[w[neg]] = True
            status[idx[rough[w[neg]]]] = RUINED
        if np.isfinite(spec.up_level):
            up = (xs[w] >= spec.up_level) & ~stop[w]
            stop[w[up]] = True
            status[idx[rough[w[up]]]] = EXITED_UP
        live = (rem > 1e-15) & ~stop
    xi[rough] = xs
    return stop


def _run(spec: _Spec, x0: float, i0: int, cfg: SimConfig) -> dict[str, np.ndarray]:
    """Run cfg.n_paths paths in blocks, each block on its own spawned stream."""
    sizes = []
    left = cfg.n_paths
    while left > 0:
        s = min(cfg.block_size, left)
        if cfg.antithetic and s % 2:
            s += 1
        sizes.append(s)
        left -= s
    streams = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    parts = [_run_block(spec, x0, i0, s, np.random.default_rng(ss), cfg.antithetic, cfg.euler_step)
             for s, ss in zip(sizes, streams)]
    out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    if cfg.antithetic:
        # reorder so pairs sit at (i, i + n/2) over the whole sample
        first = np.concatenate([np.arange(o, o + s // 2) for o, s in zip(np.cumsum([0] + sizes[:-1]), sizes)])
        second = np.concatenate([np.arange(o + s // 2, o + s) for o, s in zip(np.cumsum([0] + sizes[:-1]), sizes)])
        order = np.concatenate((first, second))
        out = {k: v[order] for k, v in out.items()}
    return out


# ---------------------------------------------------------------------------
# auxiliary (single-regime) problem

def _aux_spec(aux, b: float, reward=None, **kw) -> _Spec:
    return _Spec.from_models([aux.model], gamma=aux.gamma, kill=np.array([aux.q]),
                             barrier=np.array([float(b)]), reward=reward, **kw)


@dataclass
class AuxSample:
    """Per-path outcomes of the double-barrier strategy killed at rate q."""

    value: MCEstimate
    ndv: MCEstimate
    terminal_x: np.ndarray
    q: float

    def occupation(self, edges) -> tuple[np.ndarray, np.ndarray]:
        """q-scaled potential measure of each bin and its standard error."""
        counts, _ = np.histogram(self.terminal_x, bins=edges)
        n = self.terminal_x.size
        prob = counts / n
        return prob, np.sqrt(prob * (1 - prob) / n)


def simulate_double_barrier(aux, x0: float, b: float, cfg: SimConfig,
                            psi: Callable | None = None) -> AuxSample:
    """Monte-Carlo value of the aux double-barrier strategy, optionally with payoff psi.

    The killing time is ``e_q``; at that time the path collects ``(lam/q) psi(U)``,
    which equals ``lam E int e^{-qt} psi(U_t) dt``.
    """
    if x0 < 0:
        raise ValueError("x0 must be >= 0")
    if not b > 0:
        raise ValueError("b must be positive")
    reward = None
    if psi is not None:
        scale = aux.lam / aux.q
        reward = lambda xs, _r: scale * np.asarray(psi(xs), dtype=float)  # noqa: E731
    out = _run(_aux_spec(aux, b, reward=reward), x0, 0, cfg)
    ndv_paths = out["div"] - aux.phi * out["inj"]
    if psi is not None:
        ndv_paths = ndv_paths - aux.lam / aux.q * np.asarray(psi(out["x"]), dtype=float)
    total = out["div"] - aux.phi * out["inj"]
    return AuxSample(_estimate(total, cfg.antithetic), _estimate(ndv_paths, cfg.antithetic),
                     out["x"], aux.q)


@dataclass
class KilledSample:
    ruin_laplace: MCEstimate
    terminal_x: np.ndarray
    survived: np.ndarray

    def occupation(self, edges) -> tuple[np.ndarray, np.ndarray]:
        """q-scaled potential measure until ruin, per bin, with standard error."""
        counts, _ = np.histogram(self.terminal_x[self.survived], bins=edges)
        n = self.terminal_x.size
        prob = counts / n
        return prob, np.sqrt(prob * (1 - prob) / n)


def simulate_single_barrier_killed(model: LevyModel, q: float, gamma: float, b: float,
                                   x0: float, cfg: SimConfig) -> KilledSample:
    """Poisson dividends at b with no injection; stopped at the first passage below 0.

    The path may sit below 0 only at the stopping instant.
    """
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    spec = _Spec.from_models([model], gamma=gamma, kill=np.array([q]),
                             barrier=np.array([float(b)]), boundary="ruin")
    out = _run(spec, x0, 0, cfg)
    ruined = out["status"] == RUINED
    return KilledSample(_estimate(ruined.astype(float), cfg.antithetic), out["x"],
                        out["status"] == KILLED)


def estimate_exit(model: LevyModel, q: float, x: float, b: float,
                  cfg: SimConfig) -> tuple[MCEstimate, MCEstimate]:
    """Estimates of E[e^{-q tau_0^-}; tau_0^- < tau_b^+] and E[e^{-q tau_b^+}; tau_b^+ < tau_0^-]."""
    if not (0 <= x <= b):
        raise ValueError("need 0 <= x <= b")
    if x == 0 and model.sigma == 0:
        est = MCEstimate(1.0, 0.0, cfg.n_paths)
        return est, MCEstimate(0.0, 0.0, cfg.n_paths)
    spec = _Spec.from_models([model], gamma=0.0, kill=np.array([float(q)]),
                             barrier=np.array([np.inf]), boundary="ruin", up_level=float(b))
    out = _run(spec, x, 0, cfg)
    down = (out["status"] == RUINED).astype(float)
    up = (out["status"] == EXITED_UP).astype(float)
    return _estimate(down, cfg.antithetic), _estimate(up, cfg.antithetic)


# ---------------------------------------------------------------------------
# Markov additive model

def _map_spec(mp, barriers, mode: str = "barrier") -> _Spec:
    lam = mp.switch_rates
    probs = np.where(np.eye(mp.n_regimes, dtype=bool), 0.0, mp.generator) / lam[:, None]
    means = np.array([[sj.mean for sj in row] for row in mp.switch_jumps])
    return _Spec.from_models(list(mp.models), gamma=mp.gamma, kill=np.asarray(mp.discounts),
                             lam=lam, switch_cum=np.cumsum(probs, axis=1), switch_mean=means,
                             barrier=np.asarray(barriers, dtype=float), mode=mode)


def simulate_controlled(mp, barriers: Sequence[float], x0: float, i0: int,
                        cfg: SimConfig) -> MCEstimate:
    """Value of the regime-modulated double-barrier strategy started at (x0, i0)."""
    barriers = np.asarray(barriers, dtype=float)
    if np.any(barriers <= 0):
        raise ValueError("barriers must be positive")
    if x0 < 0:
        raise ValueError("x0 must be >= 0")
    out = _run(_map_spec(mp, barriers), x0, i0, cfg)
    return _estimate(out["div"] - mp.phi * out["inj"], cfg.antithetic)


def simulate_bound_strategies(mp, x: float, i0: int, cfg: SimConfig) -> tuple[MCEstimate, MCEstimate]:
    """(lower, upper) values of the two extreme strategies bracketing the value function.

    Upper: at each observation pay the running maximum of the raw increment since the
    previous observation, with no injection cost.  Lower: inject to stay above 0, pay
    everything at the first observation, then never pay again.  Both add ``x`` at the
    first observation.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    inf = np.full(mp.n_regimes, np.inf)
    up_spec = _map_spec(mp, inf, mode="upper")
    up_spec.boundary = "free"
    up = _run(up_spec, 0.0, i0, cfg)
    upper = up["div"] + x * up["first_obs"]
    lo = _run(_map_spec(mp, inf, mode="lower"), 0.0, i0, cfg)
    lower = lo["div"] - mp.phi * lo["inj"] + x * lo["first_obs"]
    return _estimate(lower, cfg.antithetic), _estimate(upper, cfg.antithetic)


# ---------------------------------------------------------------------------
# single trajectories for export

@dataclass
class PathRecord:
    """One simulated trajectory with its event log and discounted totals."""

    times: list[float] = field(default_factory=list)
    surplus: list[float] = field(default_factory=list)
    regimes: list[int] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    discounted_dividends: float = 0.0
    discounted_injections: float = 0.0

    def add(self, t: float, x: float, i: int, kind: str) -> None:
        self.times.append(float(t))
        self.surplus.append(float(x))
        self.regimes.append(int(i))
        self.events.append(kind)

    def rows(self) -> list[dict]:
        return [{"time": t, "surplus": x, "regime": i + 1, "event": e}
                for t, x, i, e in zip(self.times, self.surplus, self.regimes, self.events)]


def sample_path(mp, x0: float, i0: int, cfg: SimConfig,
                barriers: Sequence[float] | None = None) -> PathRecord:
    """One path on [0, horizon_T]; controlled (reflect at 0, pay above barriers) if barriers given."""
    if x0 < 0 and barriers is not None:
        raise ValueError("controlled paths need x0 >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    controlled = barriers is not None
    bars = np.asarray(barriers, float) if controlled else None
    rec = PathRecord()
    t, x, i, disc_log = 0.0, float(x0), int(i0), 0.0
    rec.add(t, x, i, "start")
    lam = mp.switch_rates
    while t < cfg.horizon_T:
        m = mp.models[i]
        rate = m.jump_intensity_p + mp.gamma + lam[i]
        tau = min(rng.exponential(1.0 / rate), cfg.horizon_T - t)
        r_i = mp.discounts[i]
        if m.sigma == 0:
            if controlled and x - m.drift_c * tau < 0:
                hit = x / m.drift_c
                rec.add(t + hit, 0.0, i, "hit_zero")
                # injection accrues at rate c while pinned at 0
                a, b_ = disc_log + r_i * hit, disc_log + r_i * tau
                rec.discounted_injections += m.drift_c * (np.exp(-a) - np.exp(-b_)) / r_i
                x = 0.0
            else:
                x -= m.drift_c * tau
        else:
            steps = max(1, int(np.ceil(tau / cfg.euler_step)))
            h = tau / steps
            for s in range(steps):
                x += -m.drift_c * h + m.sigma * np.sqrt(h) * rng.standard_normal()
                if controlled and x < 0:
                    rec.discounted_injections += -x * np.exp(-(disc_log + r_i * (s + 1) * h))
                    x = 0.0
        t += tau
        disc_log += r_i * tau
        if t >= cfg.horizon_T:
            rec.add(t, x, i, "end")
            break
        rec.add(t, x, i, "drift")
        v = rng.random() * rate
        if v < m.jump_intensity_p:
            k = rng.choice(len(m.rates), p=m.weights)
            x += rng.exponential(1.0 / m.rates[k])
            rec.add(t, x, i, "jump")
        elif v < m.jump_intensity_p + mp.gamma:
            if controlled and x > bars[i]:
                rec.discounted_dividends += (x - bars[i]) * np.exp(-disc_log)
                x = float(bars[i])
            rec.add(t, x, i, "observe")
        else:
            probs = np.where(np.arange(mp.n_regimes) == i, 0.0, mp.generator[i]) / lam[i]
            j = int(rng.choice(mp.n_regimes, p=probs))
            sj = mp.switch_jumps[i][j]
            if not sj.is_zero:
                x -= rng.exponential(-sj.mean)
            if controlled and x < 0:
                rec.discounted_injections += -x * np.exp(-disc_log)
                x = 0.0
            i = j
            rec.add(t, x, i, "switch")
    return rec


def simulate_uncontrolled(mp, x0: float, i0: int, cfg: SimConfig) -> PathRecord:
    """Raw surplus path with regime labels and switch jumps."""
    return sample_path(mp, x0, i0, cfg, barriers=None)
