"""Validation harness for montecarlo.py against its contract examples."""
import math
import time

import numpy as np
from scipy.integrate import quad

from annuitize.market import ModelParameters
from annuitize.mortality import MortalityModel, cumulative_hazard
from annuitize import closed_form
from annuitize.montecarlo import (
    SimConfig,
    TabulatedPolicy,
    tabulate_policy,
    perturbed_family,
    suggested_horizon,
    simulate_objective,
    simulate_paths,
)

p = ModelParameters(
    r=0.02, sigma=0.20, theta=0.07, beta=0.03, gamma=2.0, alpha=0.2,
    w=10.0, b_bar=1.0,
)
mort = MortalityModel.gompertz(modal_age=85.0, dispersion=10.0, current_age=60.0)
sol = closed_form.solve(p, mort, 60.0)
n = sol.internals
x_star, x_tilde = n.x_star, n.x_tilde
x0 = 0.5 * (x_tilde + x_star)
print(f"x*={x_star:.4f} x~={x_tilde:.4f} x0={x0:.4f} floor={n.floor}")

T = suggested_horizon(mort)
print(f"suggested horizon T={T:.3f}  survival={math.exp(-cumulative_hazard(mort, T)):.3e}")

# --- Example 1: x0 >= x* stops immediately, exact value, zero variance ---
pol = tabulate_policy(sol, n_points=513)
cfg = SimConfig(n_paths=1000, dt=0.01, horizon=5.0, seed=7)
res = simulate_objective(p, mort, pol, 1.05 * x_star, cfg)
exact = closed_form.g_value(sol, 1.05 * x_star)
print(f"[immediate stop] J={res.J_estimate!r} exact={exact!r} "
      f"diff={abs(res.J_estimate - exact):.3e} se={res.std_error!r} "
      f"retired={res.fraction_retired}")

# --- Example 2: pi=0, constant c,b, no stopping: deterministic, quadrature ---
c0, b0 = 1.5, 0.6
tab = TabulatedPolicy(
    x_lo=0.0, x_hi=1.0,
    consumption=np.array([c0, c0]), labor=np.array([b0, b0]),
    investment=np.array([0.0, 0.0]), retire_threshold=math.inf,
)
g1 = n.gamma1
u_const = c0 ** (1.0 - g1) * b0 ** (g1 - p.gamma) / (1.0 - g1)
Tq = 60.0
cfgq = SimConfig(n_paths=2, dt=0.005, horizon=Tq, seed=1)
resq = simulate_objective(p, mort, tab, 50.0, cfgq)
ref, _ = quad(lambda t: math.exp(-(p.beta * t + cumulative_hazard(mort, t))),
              0.0, Tq, limit=400)
ref *= u_const
print(f"[quadrature]     J={resq.J_estimate:.10f} ref={ref:.10f} "
      f"rel={abs(resq.J_estimate - ref) / abs(ref):.3e} se={resq.std_error!r}")

# --- Example 3: pure compounding paths (c=0, b=b_bar, pi=0) ---
comp = TabulatedPolicy(
    x_lo=0.0, x_hi=1.0,
    consumption=np.array([0.0, 0.0]), labor=np.array([p.b_bar, p.b_bar]),
    investment=np.array([0.0, 0.0]), retire_threshold=math.inf,
)
cfgp = SimConfig(n_paths=4, dt=0.01, horizon=10.0, seed=3)
sample = simulate_paths(p, mort, comp, 100.0, cfgp, n_record=2)
euler = 100.0 * (1.0 + p.r * cfgp.dt) ** (sample.times / cfgp.dt)
err = np.max(np.abs(sample.wealth - euler[None, :]))
print(f"[compounding]    max|X - euler|={err:.3e}  X(T)={sample.wealth[0, -1]:.6f} "
      f"exact={100.0 * math.exp(p.r * 10.0):.6f}")

# --- Example 4: determinism ---
r1 = simulate_objective(p, mort, pol, x0, SimConfig(2000, 0.01, T, seed=11))
r2 = simulate_objective(p, mort, pol, x0, SimConfig(2000, 0.01, T, seed=11))
print(f"[determinism]    identical={r1 == r2}  J={r1.J_estimate!r}")

# --- Example 5: antithetic variance reduction ---
ra = simulate_objective(p, mort, pol, x0, SimConfig(4000, 0.01, T, seed=5, antithetic=True))
rb = simulate_objective(p, mort, pol, x0, SimConfig(4000, 0.01, T, seed=5, antithetic=False))
print(f"[antithetic]     se_anti={ra.std_error:.5f} se_plain={rb.std_error:.5f} "
      f"ratio={ra.std_error / rb.std_error:.3f}")

# --- Example 6: CRN step-size refinement (weak order 1) ---
t0 = time.time()
j1 = simulate_objective(p, mort, pol, x0, SimConfig(20000, 0.01, T, seed=9),
                        noise_refinement=4)
j2 = simulate_objective(p, mort, pol, x0, SimConfig(20000, 0.005, T, seed=9),
                        noise_refinement=2)
j3 = simulate_objective(p, mort, pol, x0, SimConfig(20000, 0.0025, T, seed=9),
                        noise_refinement=1)
d12 = j1.J_estimate - j2.J_estimate
d23 = j2.J_estimate - j3.J_estimate
print(f"[weak order]     J(0.01)={j1.J_estimate:.6f} J(0.005)={j2.J_estimate:.6f} "
      f"J(0.0025)={j3.J_estimate:.6f}")
print(f"                 d12={d12:.3e} d23={d23:.3e} ratio={d12 / d23:.3f} "
      f"({time.time() - t0:.1f}s)")

# --- Example 7: dominance at desk scale ---
t0 = time.time()
fam = perturbed_family(sol, n_points=1025)
cfgd = SimConfig(20000, 0.01, T, seed=42)
base = simulate_objective(p, mort, fam["optimal"], x0, cfgd)
print(f"[dominance desk] optimal J={base.J_estimate:.6f} se={base.std_error:.5f} "
      f"retired={base.fraction_retired:.4f} insolvent={base.fraction_insolvent:.4f}")
for name, tabp in fam.items():
    if name == "optimal":
        continue
    r = simulate_objective(p, mort, tabp, x0, cfgd)
    gap = base.J_estimate - r.J_estimate
    comb = math.hypot(base.std_error, r.std_error)
    ok = base.J_estimate >= r.J_estimate - 2.0 * comb
    print(f"  {name:22s} J={r.J_estimate:.6f} gap={gap:+.5f} "
          f"(2se={2 * comb:.5f}) {'OK' if ok else 'VIOLATION'}")
print(f"                 ({time.time() - t0:.1f}s for 9 policies)")
