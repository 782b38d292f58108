"""Command-line entry point: scale, aux, solve, simulate and sweep.

Models are read from INI files (see ``data/table1.cfg``).  Every subcommand writes
CSV into the output directory, which defaults to ``$POISDIV_OUT`` or the current
directory.  Exit codes: 0 success, 3 configuration error, 4 numerical failure,
5 non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .auxctl import (AuxProblem, BarrierSearchError, PayoffError, PayoffGrid, find_b_psi,
                     performance_J_derivs, verify_hjb)
from .levy import LevyModel, ModelError, RootFindingError
from .mapctl import ClassViolation, ConvergenceError, GridSpec, MapModel, SwitchJump, solve
from .scale import ScaleSet
from .sim import SimConfig, sample_path, simulate_controlled

log = logging.getLogger("poisdiv")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_CONVERGENCE = 3, 4, 5
OUT_ENV = "POISDIV_OUT"
SWEEP_PARAMS = ("gamma", "phi", "mu", "sigma", "p", "eta", "r")


class ConfigError(ValueError):
    """A config file is malformed or describes an invalid model."""


@dataclass
class RunConfig:
    model: MapModel
    grid: GridSpec = GridSpec()
    eps: float = 0.01
    seed: int = 0
    sweep_param: str | None = None
    sweep_values: tuple[float, ...] = ()
    source: str = ""
    raw: dict = field(default_factory=dict, repr=False)


# ---------------------------------------------------------------------------
# configuration

def _floats(text: str, where: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a comma-separated list of numbers, got {text!r}") from exc


def _float(sec: configparser.SectionProxy, key: str, default: float | None = None) -> float:
    where = f"[{sec.name}] {key}"
    if key not in sec:
        if default is None:
            raise ConfigError(f"{where}: missing required field")
        return default
    try:
        return float(sec[key])
    except ValueError as exc:
        raise ConfigError(f"{where}: not a number: {sec[key]!r}") from exc


def _jumps(text: str, where: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"{where}: jump entries are weight:rate, got {item!r}")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ConfigError(f"{where}: jump entries are weight:rate, got {item!r}") from exc
    return tuple(pairs)


def _raw_from_parser(cp: configparser.ConfigParser) -> dict:
    """Plain nested dict of the parameters, so sweeps can edit and rebuild."""
    if "control" not in cp:
        raise ConfigError("missing [control] section")
    ctl = cp["control"]
    names = sorted((s for s in cp.sections() if s.startswith("regime.")),
                   key=lambda s: int(s.split(".", 1)[1]) if s.split(".", 1)[1].isdigit() else -1)
    if not names:
        raise ConfigError("no [regime.N] sections")
    for k, s in enumerate(names, start=1):
        if s != f"regime.{k}":
            raise ConfigError(f"regime sections must be numbered 1..n; found [{s}]")
    regimes = []
    for s in names:
        sec = cp[s]
        if ("mu" in sec) == ("drift_c" in sec):
            raise ConfigError(f"[{s}]: give exactly one of mu or drift_c")
        mu = _float(sec, "mu") if "mu" in sec else -_float(sec, "drift_c")
        regimes.append({"mu": mu, "sigma": _float(sec, "sigma", 0.0), "p": _float(sec, "p", 0.0),
                        "jumps": _jumps(sec.get("jumps", ""), f"[{s}] jumps"),
                        "r": _float(sec, "r")})
    n = len(regimes)
    if "generator" not in cp:
        raise ConfigError("missing [generator] section")
    gen = cp["generator"]
    rows = []
    for k in range(1, n + 1):
        key = f"row.{k}"
        if key not in gen:
            raise ConfigError(f"[generator] {key}: missing required field")
        row = _floats(gen[key], f"[generator] {key}")
        if len(row) != n:
            raise ConfigError(f"[generator] {key}: expected {n} entries, got {len(row)}")
        rows.append(row)
    sj = cp["switch_jump"] if "switch_jump" in cp else None
    default_mean = _float(sj, "exp_mean", 0.0) if sj is not None else 0.0
    means = [[default_mean] * n for _ in range(n)]
    if sj is not None:
        for key in sj:
            if key.startswith("pair."):
                parts = key.split(".")
                if len(parts) != 3 or not all(p.isdigit() for p in parts[1:]):
                    raise ConfigError(f"[switch_jump] {key}: expected pair.i.j")
                i, j = int(parts[1]), int(parts[2])
                if not (1 <= i <= n and 1 <= j <= n):
                    raise ConfigError(f"[switch_jump] {key}: regime index out of range")
                means[i - 1][j - 1] = _float(sj, key)
            elif key != "exp_mean":
                raise ConfigError(f"[switch_jump] {key}: unknown field")
    grid = cp["grid"] if "grid" in cp else None
    solver = cp["solver"] if "solver" in cp else None
    raw = {
        "gamma": _float(ctl, "gamma"), "phi": _float(ctl, "phi"),
        "regimes": regimes, "generator": rows, "switch_means": means,
        "h": _float(grid, "h", GridSpec.h) if grid is not None else GridSpec.h,
        "x_max": _float(grid, "x_max", GridSpec.x_max) if grid is not None else GridSpec.x_max,
        "eps": _float(solver, "eps", 0.01) if solver is not None else 0.01,
        "seed": int(_float(solver, "seed", 0.0)) if solver is not None else 0,
        "sweep_param": None, "sweep_values": (),
    }
    if "sweep" in cp:
        sw = cp["sweep"]
        if "param" not in sw or "values" not in sw:
            raise ConfigError("[sweep] needs both param and values")
        _check_sweep_param(sw["param"].strip(), n)
        raw["sweep_param"] = sw["param"].strip()
        raw["sweep_values"] = tuple(_floats(sw["values"], "[sweep] values"))
    return raw


def build_model(raw: dict) -> MapModel:
    """Validate and assemble the MapModel described by a raw parameter dict."""
    models = []
    for k, reg in enumerate(raw["regimes"], start=1):
        try:
            models.append(LevyModel.from_mu(reg["mu"], reg["sigma"], reg["p"], reg["jumps"]))
        except ModelError as exc:
            raise ConfigError(f"[regime.{k}]: {exc}") from exc
    try:
        jumps = tuple(tuple(SwitchJump(m) for m in row) for row in raw["switch_means"])
        return MapModel(tuple(models), np.array(raw["generator"], dtype=float), jumps,
                        tuple(reg["r"] for reg in raw["regimes"]), raw["gamma"], raw["phi"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve(path: str | os.PathLike) -> str:
    p = Path(path)
    if p.exists():
        return p.read_text()
    if str(path) in ("table1", "table1.cfg"):
        return resources.files("poisdiv").joinpath("data/table1.cfg").read_text()
    raise ConfigError(f"config file not found: {path}")


def load_config(path: str | os.PathLike) -> RunConfig:
    """Parse and validate a model file; ``table1`` names the shipped example."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(_resolve(path), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw = _raw_from_parser(cp)
    return _from_raw(raw, str(path))


def _from_raw(raw: dict, source: str) -> RunConfig:
    model = build_model(raw)
    try:
        grid = GridSpec(raw["h"], raw["x_max"])
        grid.xs
    except ValueError as exc:
        raise ConfigError(f"[grid]: {exc}") from exc
    if not raw["eps"] > 0:
        raise ConfigError("[solver] eps: must be positive")
    return RunConfig(model, grid, raw["eps"], raw["seed"], raw["sweep_param"],
                     tuple(raw["sweep_values"]), source, raw)


def _check_sweep_param(name: str, n_regimes: int) -> tuple[str, int | None]:
    base, _, idx = name.partition(".")
    if base not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param {name!r} is not one of {', '.join(SWEEP_PARAMS)}")
    if base in ("gamma", "phi"):
        if idx:
            raise ConfigError(f"sweep param {base} takes no regime index")
        return base, None
    if not idx.isdigit() or not 1 <= int(idx) <= n_regimes:
        raise ConfigError(f"sweep param {name!r} needs a regime index 1..{n_regimes}")
    return base, int(idx) - 1


def with_param(cfg: RunConfig, name: str, value: float) -> RunConfig:
    """Copy of cfg with one tunable replaced and the model revalidated."""
    base, k = _check_sweep_param(name, cfg.model.n_regimes)
    raw = {**cfg.raw, "regimes": [dict(r) for r in cfg.raw["regimes"]]}
    if k is None:
        raw[base] = float(value)
    elif base == "eta":
        jumps = raw["regimes"][k]["jumps"]
        if len(jumps) != 1:
            raise ConfigError("eta sweeps need a single jump component")
        raw["regimes"][k]["jumps"] = ((jumps[0][0], float(value)),)
    else:
        raw["regimes"][k][base] = float(value)
    # grid and tolerance may have been overridden after loading
    return dataclasses.replace(_from_raw(raw, cfg.source), grid=cfg.grid, eps=cfg.eps, seed=cfg.seed)


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(records: Sequence[dict], path: str | os.PathLike,
             fieldnames: Sequence[str] | None = None) -> Path:
    """Write records as CSV with a header and round-trippable floats."""
    if fieldnames is None:
        if not records:
            raise ValueError("fieldnames are required for an empty record list")
        fieldnames = list(records[0])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for rec in records:
            if set(rec) != set(fieldnames):
                raise ValueError("records must share the same fields")
            w.writerow([_fmt(rec[k]) for k in fieldnames])
    return path


# ---------------------------------------------------------------------------
# commands

def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV, "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _aux_for(cfg: RunConfig, regime: int) -> AuxProblem:
    if not 1 <= regime <= cfg.model.n_regimes:
        raise ConfigError(f"regime must be in 1..{cfg.model.n_regimes}")
    return cfg.model.aux[regime - 1]


def _payoff(args, x_max: float, h: float) -> PayoffGrid:
    if args.payoff_csv:
        data = np.genfromtxt(args.payoff_csv, delimiter=",", names=True)
        try:
            return PayoffGrid(data["x"], data["value"], args.tail_slope)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"payoff file {args.payoff_csv}: {exc}") from exc
    slope, intercept = args.linear_payoff
    return PayoffGrid.linear(slope, intercept, x_max, h)


def _xs(args, default_max: float, default_h: float) -> np.ndarray:
    if args.x:
        return np.array(_floats(args.x, "--x"))
    x_max = args.x_max if args.x_max is not None else default_max
    h = args.h if args.h is not None else default_h
    return np.linspace(0.0, x_max, int(round(x_max / h)) + 1)


def cmd_scale(args) -> int:
    cfg = load_config(args.config)
    aux = _aux_for(cfg, args.regime)
    q = args.q if args.q is not None else aux.q
    ss = ScaleSet.build(aux.model, q)
    xs = _xs(args, 10.0, 0.1)
    s_tilt = args.s if args.s is not None else 0.0
    rows = [{"x": x, "W": ss.W(x), "W_prime": ss.W_prime(x), "Z": ss.Z(x), "Zbar": ss.Zbar(x),
             "Z2": ss.Z2(x, s_tilt)} for x in xs]
    path = emit_csv(rows, _out_dir(args) / f"scale_regime{args.regime}.csv")
    print(f"q={q:.17g} Phi_q={ss.phi_q:.17g} roots={[float(z) for z in ss.zeta]}")
    print(f"wrote {path}")
    return 0


def cmd_aux(args) -> int:
    cfg = load_config(args.config)
    aux = _aux_for(cfg, args.regime)
    psi = _payoff(args, cfg.grid.x_max, cfg.grid.h)
    b = args.b if getattr(args, "b", None) is not None else find_b_psi(aux, psi)
    out = _out_dir(args)
    if args.aux_cmd == "barrier":
        print(f"b_psi={b:.17g}")
        emit_csv([{"regime": args.regime, "b_psi": b}], out / f"barrier_regime{args.regime}.csv")
        return 0
    if args.aux_cmd == "eval-j":
        xs = _xs(args, cfg.grid.x_max, cfg.grid.h)
        J, dJ, _ = performance_J_derivs(aux, xs, psi, b)
        rows = [{"x": x, "J": j, "dJ": d} for x, j, d in zip(xs, J, dJ)]
        path = emit_csv(rows, out / f"J_regime{args.regime}.csv")
        print(f"b={b:.17g} wrote {path}")
        return 0
    grid = np.linspace(0.0, args.hjb_x_max or 3.0 * b, args.points + 2)[1:-1]
    grid = grid[np.abs(grid - b) > 1e-9]
    rep = verify_hjb(aux, b, psi, grid)
    row = {"b": b, "below_residual": rep.below_residual, "above_residual": rep.above_residual,
           "sup_mismatch": rep.sup_mismatch, "slope_excess": rep.slope_excess,
           "argmax_ok": rep.argmax_ok, "ok": rep.ok(args.tol)}
    emit_csv([row], out / f"hjb_regime{args.regime}.csv")
    for k, v in row.items():
        print(f"{k}={_fmt(v)}")
    return 0 if rep.ok(args.tol) else EXIT_NUMERIC


def _solve_cfg(cfg: RunConfig, verbose: bool = False):
    def report(row):
        if verbose:
            print(f"iter {row.n:3d} gap {row.gap:.6f} b " + " ".join(f"{v:.4f}" for v in row.barriers))
    return solve(cfg.model, cfg.grid, cfg.eps, on_iter=report)


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if args.eps is not None:
        cfg = dataclasses.replace(cfg, eps=args.eps)
    t0 = time.perf_counter()
    res = _solve_cfg(cfg, args.verbose)
    n = cfg.model.n_regimes
    out = _out_dir(args)
    trace = [{"n": r.n, "gap": r.gap, **{f"b_{i + 1}": r.barriers[i] for i in range(n)}}
             for r in res.trace]
    emit_csv(trace, out / "trace.csv", ["n", "gap"] + [f"b_{i + 1}" for i in range(n)])
    V = res.value
    emit_csv([{"x": x, **{f"V_{i + 1}": V.values[i, k] for i in range(n)}} for k, x in enumerate(V.xs)],
             out / "value.csv")
    print(f"iterations={res.iterations} barriers=" + ",".join(f"{b:.6f}" for b in res.barriers)
          + f" seconds={time.perf_counter() - t0:.1f}")
    return 0


def run_sweep(cfg: RunConfig, param: str, values: Iterable[float], path: str | os.PathLike,
              verbose: bool = False) -> list[dict]:
    """One full solve per value; the partial table is written even if a solve fails."""
    n = cfg.model.n_regimes
    fields = [param] + [f"b_{i + 1}" for i in range(n)] + [f"V0_{i + 1}" for i in range(n)] + ["iterations"]
    rows: list[dict] = []
    try:
        for v in values:
            res = _solve_cfg(with_param(cfg, param, v))
            row = {param: float(v), **{f"b_{i + 1}": res.barriers[i] for i in range(n)},
                   **{f"V0_{i + 1}": res.value.values[i, 0] for i in range(n)},
                   "iterations": res.iterations}
            rows.append(row)
            if verbose:
                print(" ".join(f"{k}={_fmt(val)}" for k, val in row.items()))
    finally:
        emit_csv(rows, path, fields)
    return rows


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    param = args.param or cfg.sweep_param
    values = _floats(args.values, "--values") if args.values else cfg.sweep_values
    if not param or not values:
        raise ConfigError("sweep needs a parameter and values (flags or a [sweep] section)")
    if args.x_max is not None:
        cfg = dataclasses.replace(cfg, grid=GridSpec(cfg.grid.h, args.x_max))
    path = _out_dir(args) / f"sweep_{param}.csv"
    run_sweep(cfg, param, values, path, verbose=True)
    print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    mp = cfg.model
    seed = args.seed if args.seed is not None else cfg.seed
    sim_cfg = SimConfig(seed=seed, n_paths=args.paths, horizon_T=args.horizon,
                        antithetic=args.antithetic)
    i0 = args.regime - 1
    if not 0 <= i0 < mp.n_regimes:
        raise ConfigError(f"regime must be in 1..{mp.n_regimes}")
    barriers = _floats(args.barriers, "--barriers") if args.barriers else None
    if barriers is not None and len(barriers) != mp.n_regimes:
        raise ConfigError(f"--barriers needs {mp.n_regimes} values")
    out = _out_dir(args)
    if args.trajectory:
        rec = sample_path(mp, args.x0, i0, sim_cfg, barriers)
        path = emit_csv(rec.rows(), out / "trajectory.csv", ["time", "surplus", "regime", "event"])
        print(f"events={len(rec.times)} wrote {path}")
        return 0
    if barriers is None:
        raise ConfigError("batch simulation needs --barriers")
    est = simulate_controlled(mp, barriers, args.x0, i0, sim_cfg)
    emit_csv([{"x0": args.x0, "regime": args.regime, "estimate": est.mean, "stderr": est.stderr,
               "n_paths": est.n}], out / "simulate.csv")
    print(f"estimate={est.mean:.17g} stderr={est.stderr:.17g}")
    return 0


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text, "--linear-payoff")
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected slope,intercept")
    return vals[0], vals[1]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poisdiv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", default="table1", help="model file, or 'table1' for the shipped example")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")

    def xgrid(p):
        p.add_argument("--x", help="comma-separated evaluation points")
        p.add_argument("--x-max", type=float)
        p.add_argument("--h", type=float)

    p = sub.add_parser("scale", help="tabulate W, W', Z and Zbar for one regime")
    common(p)
    xgrid(p)
    p.add_argument("--regime", type=int, default=1)
    p.add_argument("--q", type=float, help="discount level (default r_i + lambda_i)")
    p.add_argument("--s", type=float, help="tilt for the Z2 column (default 0)")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("aux", help="single-regime auxiliary problem")
    aux_sub = p.add_subparsers(dest="aux_cmd", required=True)
    for name, helptext in (("eval-j", "performance function and slope on a grid"),
                           ("barrier", "optimal barrier for the payoff"),
                           ("hjb", "check the variational inequality at a barrier")):
        q = aux_sub.add_parser(name, help=helptext)
        common(q)
        q.add_argument("--regime", type=int, default=1)
        q.add_argument("--payoff-csv", help="payoff table with columns x,value")
        q.add_argument("--tail-slope", type=float, default=0.0)
        q.add_argument("--linear-payoff", type=_pair, default=(0.0, 0.0), metavar="SLOPE,INTERCEPT")
        if name != "barrier":
            q.add_argument("--b", type=float, help="barrier (default: the optimal one)")
        if name == "eval-j":
            xgrid(q)
        if name == "hjb":
            q.add_argument("--points", type=int, default=200)
            q.add_argument("--hjb-x-max", type=float)
            q.add_argument("--tol", type=float, default=1e-6)
        q.set_defaults(func=cmd_aux)

    p = sub.add_parser("solve", help="value iteration for the regime-switching problem")
    common(p)
    p.add_argument("--eps", type=float)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte-Carlo value or a single exported path")
    common(p)
    p.add_argument("--barriers", help="comma-separated barrier per regime")
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--regime", type=int, default=1)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--antithetic", action="store_true")
    p.add_argument("--trajectory", action="store_true", help="export one path instead of estimating")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="re-solve over a list of parameter values")
    common(p)
    p.add_argument("--param", help="gamma, phi, or mu.i, sigma.i, p.i, eta.i, r.i")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--x-max", type=float)
    p.set_defaults(func=cmd_sweep)
    return ap


_LIST_OPTIONS = ("--values", "--x", "--barriers", "--linear-payoff")
_NUMERIC_LIST = re.compile(r"^-?[\d.]")


def _join_list_options(argv: Sequence[str]) -> list[str]:
    """Glue list options to their value so argparse does not read "-1.4,-1.5" as a flag."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _LIST_OPTIONS:
            nxt = next(it, None)
            if nxt is not None and _NUMERIC_LIST.match(nxt):
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
        else:
            out.append(tok)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_join_list_options(argv))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (RootFindingError, BarrierSearchError, PayoffError, ClassViolation,
            FloatingPointError, ArithmeticError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
