"""Barrier sensitivity to the observation rate and the injection cost.

Each value triggers a full solve; a coarser grid keeps the run short.
"""

from __future__ import annotations

import dataclasses
import tempfile
from pathlib import Path

from poisdiv import GridSpec
from poisdiv.cli import load_config, run_sweep

cfg = dataclasses.replace(load_config("table1"), grid=GridSpec(0.1, 80.0))
out = Path(tempfile.mkdtemp())

for param, values in (("gamma", (0.3, 0.5, 0.7)), ("phi", (1.25, 1.5, 1.75))):
    print(f"\n{param:>6}      b_1      b_2")
    for row in run_sweep(cfg, param, values, out / f"sweep_{param}.csv"):
        print(f"{row[param]:6.2f} {row['b_1']:8.3f} {row['b_2']:8.3f}")
print(f"\ntables written to {out}")
