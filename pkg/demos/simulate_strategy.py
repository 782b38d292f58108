"""Monte-Carlo check of the solved strategy and a single exported path.

The simulated value at the optimal barriers should agree with the solver,
and moving the barriers away from them should lower it.
"""

from __future__ import annotations

import numpy as np

from poisdiv import SimConfig, simulate_controlled, simulate_uncontrolled, solve
from poisdiv.cli import load_config
from poisdiv.sim import sample_path

cfg = load_config("table1")
res = solve(cfg.model, cfg.grid, eps=cfg.eps)
mc = SimConfig(seed=11, n_paths=200_000)

print(f"solver value V(0, regime 1) = {res.value(0.0, 0):.4f}")
for scale in (1.0, 0.5, 1.5):
    bars = res.barriers * scale
    est = simulate_controlled(cfg.model, bars, 0.0, 0, mc)
    print(f"barriers {np.round(bars, 3)}: MC {est.mean:.4f} ± {est.stderr:.4f}")

path = sample_path(cfg.model, 20.0, 0, SimConfig(seed=2, horizon_T=50.0), barriers=res.barriers)
print(f"\ncontrolled path over T=50: {path.events.count('observe')} observations, "
      f"discounted dividends {path.discounted_dividends:.3f}, "
      f"discounted injections {path.discounted_injections:.3f}")
free = simulate_uncontrolled(cfg.model, 5.0, 0, SimConfig(seed=2, horizon_T=50.0))
print(f"uncontrolled path ends at x = {free.surplus[-1]:.3f} after {free.events.count('switch')} switches")
