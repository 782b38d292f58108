"""Value iteration on the shipped two-regime example.

Prints the barrier sequence as the iteration contracts, then the converged
value function at a few surplus levels.
"""

from __future__ import annotations

from poisdiv import contraction_beta, solve
from poisdiv.cli import load_config

cfg = load_config("table1")
print(f"contraction factor beta = {contraction_beta(cfg.model):.5f}")


def show(row):
    if row.n % 10 == 0 or row.n < 4:
        print(f"n={row.n:3d}  gap={row.gap:.3e}  barriers={row.barriers.round(4)}")


res = solve(cfg.model, cfg.grid, eps=cfg.eps, on_iter=show)
print(f"\nconverged in {res.iterations} iterations, barriers {res.barriers.round(4)}")
for x in (0.0, 5.0, 10.0, 20.0):
    print(f"V({x:4.1f}, regime 1) = {res.value(x, 0):9.4f}   V({x:4.1f}, regime 2) = {res.value(x, 1):9.4f}")
