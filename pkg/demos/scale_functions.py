"""Scale functions of one regime, checked against their defining identities.

Builds W, Z and the tilted Z(x, s) for the first shipped regime and prints the
two-sided exit probabilities next to a Monte-Carlo estimate.
"""

from __future__ import annotations

import numpy as np

from poisdiv import LevyModel, ScaleSet, SimConfig, estimate_exit

model = LevyModel.from_mu(-1.5, 0.0, 0.2, [(1.0, 0.2)])
q = 0.35
ss = ScaleSet.build(model, q)

print(f"roots of psi(s) = q: {np.round(ss.zeta, 6)}")
print(f"Phi(q) = {ss.phi_q:.6f}   W(0+) = {ss.W(0.0):.6f}   1/c = {1 / model.drift_c:.6f}")

# the Laplace transform of W inverts psi - q
for s in ss.phi_q + np.array([0.5, 2.0]):
    print(f"s={s:.3f}: laplace_W(s) * (psi(s) - q) = {ss.laplace_W(s) * (model.psi(s) - q):.12f}")

xs = np.array([0.0, 1.0, 2.0, 5.0])
print("\n   x        W(x)        Z(x)    Z(x, 0.5)")
for x, w, z, z2 in zip(xs, ss.W(xs), ss.Z(xs), ss.Z2(xs, 0.5)):
    print(f"{x:4.1f} {w:11.6f} {z:11.6f} {z2:11.6f}")

x, b = 1.0, 3.0
down, up = estimate_exit(model, q, x, b, SimConfig(seed=1, n_paths=200_000))
print(f"\nexit below 0 before {b}: exact {ss.exit_down(x, b):.5f}  MC {down.mean:.5f} ± {down.stderr:.5f}")
print(f"exit above {b} first:     exact {ss.exit_up(x, b):.5f}  MC {up.mean:.5f} ± {up.stderr:.5f}")
