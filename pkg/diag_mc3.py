"""Criterion-7 scale timing, gap stability vs horizon, weak-order data."""
import math
import time

import numpy as np

from annuitize.market import ModelParameters
from annuitize.mortality import MortalityModel
from annuitize import closed_form
from annuitize.montecarlo import (
    SimConfig,
    tabulate_policy,
    perturbed_family,
    frozen_hazard,
    simulate_family,
)
from annuitize.montecarlo import _run

p = ModelParameters(
    r=0.02, sigma=0.20, theta=0.07, beta=0.03, gamma=2.0, alpha=0.2,
    w=10.0, b_bar=1.0,
)
mort = MortalityModel.gompertz(modal_age=85.0, dispersion=10.0, current_age=60.0)
sol = closed_form.solve(p, mort, 60.0)
n = sol.internals
x0 = 0.5 * (n.x_tilde + n.x_star)
qs = frozen_hazard(mort)

fam = perturbed_family(sol)  # default n_points=4097

# --- B: gap stability vs horizon (desk scale, family engine) ---
print("=== gap stability vs horizon (2e4 paths, dt=0.01, frozen hazard) ===")
for T in (40.0, 60.0, 100.0, 250.0):
    t0 = time.time()
    res = simulate_family(p, qs, fam, x0, SimConfig(20000, 0.01, T, seed=42))
    base = res["optimal"]
    line = " ".join(
        f"{name.split('_')[-1]}:{base.J_estimate - r.J_estimate:+.4f}"
        for name, r in res.items() if name != "optimal"
    )
    worst = min(
        (base.J_estimate - r.J_estimate) / math.hypot(base.std_error, r.std_error)
        for name, r in res.items() if name != "optimal"
    )
    print(f"T={T:5.0f}: J_opt={base.J_estimate:.4f} se={base.std_error:.4f} "
          f"worst_gap/se={worst:+.2f}  ({time.time() - t0:.1f}s)")
    print(f"        {line}")

# --- A: criterion scale ---
print("=== criterion scale (1e5 paths, dt=0.005, T=60, frozen hazard) ===")
t0 = time.time()
res = simulate_family(p, qs, fam, x0, SimConfig(100000, 0.005, 60.0, seed=2024))
elapsed = time.time() - t0
base = res["optimal"]
print(f"family run: {elapsed:.1f}s")
allpass = True
for name, r in res.items():
    if name == "optimal":
        print(f"  optimal              J={r.J_estimate:.6f} se={r.std_error:.5f} "
              f"ret={r.fraction_retired:.4f} ins={r.fraction_insolvent:.4f}")
        continue
    comb = math.hypot(base.std_error, r.std_error)
    ok = base.J_estimate >= r.J_estimate - 2.0 * comb
    allpass &= ok
    print(f"  {name:20s} J={r.J_estimate:.6f} gap={base.J_estimate - r.J_estimate:+.5f} "
          f"2se={2 * comb:.5f} {'OK' if ok else 'VIOLATION'}")
print(f"  ALL {'PASS' if allpass else 'FAIL'}")

# --- C: weak order, per-path differences (frozen hazard) ---
print("=== weak order (2e4 paths, T=60, frozen hazard, CRN refinement) ===")
pol = fam["optimal"]
t0 = time.time()
J1, s1, _ = _run(p, qs, pol, x0, SimConfig(20000, 0.01, 60.0, seed=9), noise_refinement=4)
J2, s2, _ = _run(p, qs, pol, x0, SimConfig(20000, 0.005, 60.0, seed=9), noise_refinement=2)
J3, s3, _ = _run(p, qs, pol, x0, SimConfig(20000, 0.0025, 60.0, seed=9), noise_refinement=1)
d12 = J1 - J2
d23 = J2 - J3
print(f"  ({time.time() - t0:.1f}s)")
for name, d in (("d12", d12), ("d23", d23)):
    print(f"  {name}: mean={d.mean():+.4e} se={d.std() / math.sqrt(d.size):.2e} "
          f"sd={d.std():.3e}")
print(f"  ratio={d12.mean() / d23.mean():+.3f}")
