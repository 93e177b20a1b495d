"""Electron-to-nucleus population transfer built from two conditional
pi/2 rotations, checked against the ideal two-qubit matrix.

Run: python demos/transfer_gate.py
"""
import math

import numpy as np

from nvdd import FieldConfig, NvParams, design_gate
from nvdd.experiments import calibrate_cr_plan, estimate_gate_time, transfer_distance, transfer_fidelity

params = NvParams()
field = FieldConfig(0.28, 5e-3)

# fastest closed-form plan over a range of tilts
plan = design_gate(math.pi / 2, params, {"b_z": 0.28, "b_perp": (2e-3, 7e-3, 51)})
print(f"design: n_p={plan.n_p}, tau={plan.tau * 1e9:.1f} ns, b_perp={plan.b_perp * 1e3:.2f} mT, "
      f"{plan.total_time * 1e6:.2f} us")

# the same rotation tuned on the simulator
cal = calibrate_cr_plan(params, field, math.pi / 2)
d, leak = transfer_distance(cal, params)
print(f"calibrated: n_p={cal.n_p}, b_perp={cal.b_perp * 1e3:.3f} mT; distance to ideal {d:.3f}, leakage {leak:.1e}")

print(" theta    p0     p0*    p1     p1*")
for r in transfer_fidelity(np.linspace(0, math.pi, 9), params, field, plan=cal):
    print(f"{r.theta:6.3f}  {r.p0:.3f}  {r.p0_expected:.3f}  {r.p1:.3f}  {r.p1_expected:.3f}")

print(estimate_gate_time(cal, params, t_cr=4.2e-6).text())
