"""Single-regime control problem with a terminal payoff.

For a concave payoff, find the barrier where the performance function has
unit slope, then show that no other barrier does better and that the
variational inequality holds.
"""

from __future__ import annotations

import numpy as np

from poisdiv import (AuxProblem, LevyModel, PayoffGrid, SimConfig, dJ_dx, find_b_psi,
                     performance_J, simulate_double_barrier, verify_hjb)

model = LevyModel.from_mu(-1.5, 0.0, 0.2, [(1.0, 0.2)])
aux = AuxProblem(model, r=0.05, lam=0.3, gamma=0.3, phi=1.5)

xs = np.linspace(0.0, 20.0, 401)
payoff = PayoffGrid(xs, 2.0 * np.sqrt(xs + 1.0) - 2.0 + 0.3 * xs, tail_slope=0.3)

b = find_b_psi(aux, payoff)
print(f"optimal barrier b = {b:.6f}, slope there {dJ_dx(aux, b, b, payoff):.10f}")

probe = np.array([0.0, 1.0, b, 2 * b])
print("\n   x    J(x; b)   J(x; b/2)  J(x; 2b)")
for x in probe:
    vals = [performance_J(aux, x, payoff, bb) for bb in (b, b / 2, 2 * b)]
    print(f"{x:5.2f} " + " ".join(f"{v:10.5f}" for v in vals))

report = verify_hjb(aux, b, payoff, np.linspace(0.05, 3 * b, 100))
print(f"\nHJB residuals: below {report.below_residual:.1e}, above {report.above_residual:.1e}")

sample = simulate_double_barrier(aux, 1.0, b, SimConfig(seed=3, n_paths=200_000), psi=payoff)
print(f"J(1) exact {performance_J(aux, 1.0, payoff, b):.5f}  "
      f"MC {sample.value.mean:.5f} ± {sample.value.stderr:.5f}")
