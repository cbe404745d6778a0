"""Monte Carlo valuation of wealth-threshold annuitization policies.

Simulates the controlled wealth process

    dX = [r X + pi (mu - r) + w (b_bar - b) - c] dt + sigma pi dW

under a tabulated feedback policy until the first time X crosses the
policy's retirement threshold, accumulating the survival-weighted
objective

    J = E[ integral_0^tau e^{-(beta t + H(t))} u1(c_t, b_t) dt
           + e^{-(beta tau + H(tau))} G_tau(X_tau) ],

where H is the cumulative mortality hazard from the evaluation age and
G_t(x) = k_t^{1-gamma1} x^{1-gamma1} / (rho_t (1-gamma1)) is the value
of annuitizing wealth x at age (eval_age + t), with rho_t = beta +
delta(eval_age + t) and k_t the conversion factor at that effective
rate.  Mortality enters through the discount weight e^{-H(t)} rather
than through simulated death times: this integrates the death time out
exactly and removes its variance contribution.  The annuitization
coefficients are refreshed along the path (full age dependence), while
the policy itself is the stationary feedback rule supplied by the
caller.

Scheme and estimator
--------------------
* Euler--Maruyama with a fixed step ``dt`` (weak order 1).  Paths that
  reach the solvency floor -w b_bar / r are absorbed with zero further
  reward.  Paths still running at the horizon either contribute nothing
  beyond it (plain truncation -- adequate only when the remaining
  discount weight is negligible) or, when a ``ValueTable`` of
  continuation values is supplied, receive e^{-(beta T + H(T))} V(X_T)
  as a terminal reward.  The bootstrapped form is what makes short
  horizons usable for policy comparisons: with the true stationary
  value function in the table, following a perturbed policy to T and
  the optimal one after is an admissible strategy, so its estimate
  cannot exceed the optimum's in expectation at *any* horizon, whereas
  plain truncation spuriously favors policies that front-load
  consumption.
* Noise is generated from counter-based Philox streams, one stream per
  fixed block of 4096 path slots, consumed on a fixed per-step layout
  that never depends on which paths are still active.  Two runs with
  the same seed therefore drive *any* two policies with identical
  Brownian increments (common random numbers), which is what makes
  small objective differences between perturbed policies resolvable.
* ``noise_refinement=m`` makes one step of size dt consume m
  sub-draws and sum them into the step's increment.  A run at (dt, m=2)
  and a run at (dt/2, m=1) then see the *same* Brownian path, so
  step-size bias can be measured with the statistical noise differenced
  away.
* Antithetic pairing: path 2i+1 uses the negated draws of path 2i, and
  the standard error is computed from pair means.
* Running rewards are accumulated per path in float64 (the
  single-policy engine adds Kahan compensation) and the final
  cross-path reductions use ``math.fsum``, so results are
  bit-reproducible for a fixed seed and independent of how the active
  set shrinks.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .closed_form import (
    ClosedFormSolution,
    consumption_from_wealth,
    solvency_floor,
    value_function,
)
from .market import ModelParameters, conversion_factors, derive_gamma1
from .mortality import MortalityModel, cumulative_hazard, force_of_mortality
from .numerics import Bracket, Tolerance, invert_monotone

__all__ = [
    "InsolvencyDominant",
    "SimConfig",
    "SimResult",
    "PathSample",
    "TabulatedPolicy",
    "ValueTable",
    "DominanceReport",
    "tabulate_policy",
    "tabulate_value",
    "perturbed_family",
    "frozen_hazard",
    "suggested_horizon",
    "simulate_objective",
    "simulate_family",
    "simulate_paths",
    "dominance_report",
    "dump_paths_csv",
]

log = logging.getLogger(__name__)

# Paths are striped over fixed-size blocks, one Philox stream per block,
# so the draw layout is a pure function of (seed, block, step) and the
# stream for block j can be skipped once every path in it has resolved.
_BLOCK = 4096


class InsolvencyDominant(UserWarning):
    """More than 10% of paths were absorbed at the solvency floor.

    The objective estimate is then dominated by the absorption rule
    rather than by the policy being valued; results should be read as a
    diagnostic of the configuration, not as a policy comparison.
    """


@dataclass(frozen=True)
class SimConfig:
    """Simulation size, step, horizon, seed, and variance-reduction mode.

    The horizon must be long enough that truncating at it is harmless:
    either the survival weight e^{-H(horizon)} is below 1e-6, or the
    policy resolves (retires or absorbs) more than 99.9% of paths before
    it.  ``simulate_objective`` checks this after the run and logs a
    warning when neither holds, since the estimate is then biased low.
    """

    n_paths: int
    dt: float
    horizon: float
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0.0 < self.dt <= 0.01:
            raise ValueError(f"dt must lie in (0, 0.01], got {self.dt}")
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.antithetic and self.n_paths % 2:
            raise ValueError(
                f"antithetic pairing needs an even path count, got {self.n_paths}"
            )

    @property
    def n_steps(self) -> int:
        """Number of Euler steps covering the horizon."""
        return max(1, math.ceil(self.horizon / self.dt - 1e-9))


@dataclass(frozen=True)
class SimResult:
    """Objective estimate with its standard error and resolution counts.

    ``fraction_retired`` and ``fraction_insolvent`` need not sum to 1:
    the remainder is paths still running at the horizon (which should be
    negligible under a well-chosen SimConfig).
    """

    J_estimate: float
    std_error: float
    fraction_retired: float
    fraction_insolvent: float


@dataclass(frozen=True)
class PathSample:
    """Recorded trajectories at a fixed time stride.

    Arrays are shaped (n_record, n_times) except ``times``.  After a
    path retires, its wealth is frozen at the annuitized amount and the
    recorded controls switch to the retired ones (annuity payout rate
    k_t * X as consumption, no labor, the retired investment fraction);
    after insolvency everything is frozen with zero controls.
    """

    times: np.ndarray
    wealth: np.ndarray
    consumption: np.ndarray
    labor: np.ndarray
    investment: np.ndarray
    retired: np.ndarray


@dataclass(frozen=True, eq=False)
class TabulatedPolicy:
    """Feedback controls on a uniform wealth grid, plus a stop threshold.

    ``consumption``, ``labor`` and ``investment`` hold the control
    levels at ``n_points`` equally spaced wealths on [x_lo, x_hi];
    lookups interpolate linearly and clamp outside the grid.  The
    policy stops (annuitizes) at the first time X >= retire_threshold,
    checked before the controls are applied, so controls are never
    consumed at wealths above the threshold plus one step's overshoot.

    ``utility`` optionally tabulates the flow utility u1(c_j, b_j) at
    the same nodes; when present, the simulators interpolate it instead
    of re-evaluating the two fractional powers per path per step.  The
    discrete policy is then *defined* as the interpolants of all four
    tables, which is consistent with the interpolated controls to
    second order in the grid spacing.

    Any object with this ``lookup``/``retire_threshold`` interface can
    be passed to the simulators; the dataclass is just the common case.
    """

    x_lo: float
    x_hi: float
    consumption: np.ndarray
    labor: np.ndarray
    investment: np.ndarray
    retire_threshold: float
    utility: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.x_lo < self.x_hi:
            raise ValueError(f"need x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")
        names = ("consumption", "labor", "investment") + (
            ("utility",) if self.utility is not None else ()
        )
        for name in names:
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or arr.size < 2:
                raise ValueError(f"{name} table must be 1-D with >= 2 entries")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} table has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.consumption.size
        for name in names[1:]:
            if getattr(self, name).size != n:
                raise ValueError("control tables must share one length")
        if np.any(self.consumption < 0.0) or np.any(self.labor < 0.0):
            raise ValueError("consumption and labor tables must be >= 0")
        if not math.isfinite(self.retire_threshold) and self.retire_threshold < 0:
            raise ValueError("retire_threshold must be finite or +inf")

    @property
    def spacing(self) -> float:
        return (self.x_hi - self.x_lo) / (self.consumption.size - 1)

    def _locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = (np.asarray(x, dtype=float) - self.x_lo) / self.spacing
        i = np.clip(t.astype(np.int64), 0, self.consumption.size - 2)
        frac = np.clip(t - i, 0.0, 1.0)
        return i, frac

    def lookup(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Controls (c, b, pi) at wealths ``x`` (vectorized)."""
        i, frac = self._locate(x)
        c = self.consumption[i] * (1.0 - frac) + self.consumption[i + 1] * frac
        b = self.labor[i] * (1.0 - frac) + self.labor[i + 1] * frac
        pi = self.investment[i] * (1.0 - frac) + self.investment[i + 1] * frac
        return c, b, pi

    def lookup_with_reward(
        self, x: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Controls plus interpolated flow utility (requires ``utility``)."""
        if self.utility is None:
            raise ValueError("this policy carries no utility table")
        i, frac = self._locate(x)
        w0 = 1.0 - frac
        c = self.consumption[i] * w0 + self.consumption[i + 1] * frac
        b = self.labor[i] * w0 + self.labor[i + 1] * frac
        pi = self.investment[i] * w0 + self.investment[i + 1] * frac
        u = self.utility[i] * w0 + self.utility[i + 1] * frac
        return c, b, pi, u


def _working_controls(sol: ClosedFormSolution, x: float) -> tuple[float, float, float]:
    """Working-regime controls (c, b, pi) at wealth x, extended past x*.

    Below the optimal threshold this is the closed-form feedback policy
    (one wealth-map inversion per point, with labor and the investment
    fraction derived from the same consumption level).  On [x*, ...)
    -- needed only by deliberately-late-stopping policies -- the
    capped-labor regime's first-order conditions continue smoothly, so
    the corner wealth map is inverted on a widened bracket.
    """
    n = sol.internals
    if x < n.x_star:
        c, regime = consumption_from_wealth(sol, x)
        if regime == "corner":
            return c, n.b_post, (n.theta / n.sigma) * c * sol.corner_map.derivative(c) / n.gamma1
        b = min(max(n.xi * c, 0.0), n.b_bar)
        return c, b, (n.theta / n.sigma) * c * sol.interior_map.derivative(c) / n.gamma
    m = sol.corner_map
    hi = m.c_hi
    for _ in range(200):
        if m(hi) >= x:
            break
        hi *= 1.25
    else:
        raise RuntimeError(f"could not bracket the corner map at x = {x}")
    c = invert_monotone(m, x, Bracket(m.c_lo, hi), Tolerance())
    return c, n.b_post, (n.theta / n.sigma) * c * m.derivative(c) / n.gamma1


def tabulate_policy(
    sol: ClosedFormSolution,
    *,
    n_points: int = 4097,
    consumption_scale: float = 1.0,
    investment_scale: float = 1.0,
    retire_at: float | None = None,
) -> TabulatedPolicy:
    """Tabulate the closed-form feedback policy, optionally perturbed.

    ``consumption_scale`` and ``investment_scale`` multiply the
    respective control everywhere (labor is kept at its unperturbed
    level, so scaled-consumption policies remain inside the admissible
    set); ``retire_at`` moves the stopping threshold away from the
    optimal x*.  With all three at their defaults this is the optimal
    policy itself.

    The grid spans from just above the solvency floor to the stopping
    threshold; simulation lookups below the grid clamp to the first
    entry (vanishing controls near the floor) and no lookup above the
    threshold ever happens because stopping is checked first.
    """
    n = sol.internals
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    if consumption_scale <= 0.0:
        raise ValueError(f"consumption_scale must be > 0, got {consumption_scale}")
    threshold = float(n.x_star if retire_at is None else retire_at)
    x_lo = n.floor + 1e-3 * (n.x_star - n.floor)
    if threshold <= x_lo:
        raise ValueError(
            f"retire_at = {threshold} is not above the tabulation start {x_lo}"
        )
    xs = np.linspace(x_lo, threshold, n_points)
    c = np.empty(n_points)
    b = np.empty(n_points)
    pi = np.empty(n_points)
    for j, x in enumerate(xs):
        c[j], b[j], pi[j] = _working_controls(sol, float(x))
    c *= consumption_scale
    pi *= investment_scale
    u = c ** (1.0 - n.gamma1) * b ** (n.gamma1 - n.gamma) / (1.0 - n.gamma1)
    return TabulatedPolicy(
        x_lo=float(x_lo),
        x_hi=threshold,
        consumption=c,
        labor=b,
        investment=pi,
        retire_threshold=threshold,
        utility=u,
    )


def perturbed_family(sol: ClosedFormSolution, *, n_points: int = 4097) -> dict[str, TabulatedPolicy]:
    """The optimal policy and its eight standard perturbations.

    Consumption scaled by 0.8/0.9/1.1/1.2, the investment fraction by
    0.75/1.25, and the stopping threshold moved to 0.9 x* and 1.1 x*.
    Under the optimality of the base policy, every member's simulated
    objective should come out at or below the base one (up to Monte
    Carlo error) when all are run with common random numbers.
    """
    x_star = sol.internals.x_star
    family = {"optimal": tabulate_policy(sol, n_points=n_points)}
    for scale in (0.8, 0.9, 1.1, 1.2):
        name = f"consumption_x{scale:g}"
        family[name] = tabulate_policy(sol, n_points=n_points, consumption_scale=scale)
    for scale in (0.75, 1.25):
        family[f"investment_x{scale:g}"] = tabulate_policy(
            sol, n_points=n_points, investment_scale=scale
        )
    family["retire_at_0.9xstar"] = tabulate_policy(
        sol, n_points=n_points, retire_at=0.9 * x_star
    )
    family["retire_at_1.1xstar"] = tabulate_policy(
        sol, n_points=n_points, retire_at=1.1 * x_star
    )
    return family


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Continuation values V(x) on a uniform wealth grid.

    Supplied to the simulators as a terminal condition: a path still
    running at the horizon T earns e^{-(beta T + H(T))} V(X_T) instead
    of being truncated to zero continuation.  Lookups interpolate
    linearly and clamp to the end nodes outside [x_lo, x_hi].
    """

    x_lo: float
    x_hi: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("values must be a 1-D array with at least 2 nodes")
        if not np.isfinite(vals).all():
            raise ValueError("values must be finite")
        if not (math.isfinite(self.x_lo) and math.isfinite(self.x_hi)):
            raise ValueError("grid endpoints must be finite")
        if self.x_hi <= self.x_lo:
            raise ValueError(f"need x_hi > x_lo, got [{self.x_lo}, {self.x_hi}]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def spacing(self) -> float:
        return (self.x_hi - self.x_lo) / (self.values.size - 1)

    def lookup(self, x: np.ndarray) -> np.ndarray:
        t = (np.asarray(x, dtype=float) - self.x_lo) / self.spacing
        i = np.clip(t.astype(np.int64), 0, self.values.size - 2)
        frac = np.clip(t - i, 0.0, 1.0)
        return self.values[i] * (1.0 - frac) + self.values[i + 1] * frac


def tabulate_value(
    sol: ClosedFormSolution, *, x_hi: float | None = None, n_points: int = 4097
) -> ValueTable:
    """Tabulate the closed-form value function for terminal bootstrapping.

    The grid spans the same inner cutoff above the solvency floor that
    ``tabulate_policy`` uses, up to ``x_hi`` (default 1.25 x*, enough to
    cover paths held working by a raised stopping threshold; values at
    and above x* are the stopped value G).  The table is C0 with O(h^2)
    interpolation error on the smooth closed form, which is far below
    Monte Carlo resolution at the default node count.
    """
    n = sol.internals
    if n_points < 2:
        raise ValueError(f"n_points must be at least 2, got {n_points}")
    x_lo = n.floor + 1e-3 * (n.x_star - n.floor)
    if x_hi is None:
        x_hi = 1.25 * n.x_star
    if x_hi <= x_lo:
        raise ValueError(f"x_hi = {x_hi} does not exceed the grid start {x_lo}")
    grid = np.linspace(x_lo, x_hi, n_points)
    vals = np.array([value_function(sol, float(x)) for x in grid])
    return ValueTable(x_lo=x_lo, x_hi=float(x_hi), values=vals)


def frozen_hazard(mortality: MortalityModel) -> MortalityModel:
    """The constant-hazard model matching ``mortality`` at its current age.

    A stationary feedback policy solves the age-frozen problem exactly,
    so optimality comparisons (the dominance checks) are run in this
    environment; simulating the same policy under the full age-varying
    hazard instead measures the quality of the age-frozen
    approximation, which is a diagnostic rather than a bar to clear.
    """
    return MortalityModel.constant(
        force_of_mortality(mortality, 0.0), current_age=mortality.current_age
    )


def suggested_horizon(mortality: MortalityModel, tail: float = 1e-6) -> float:
    """Smallest horizon at which the survival weight drops below ``tail``.

    Running to this horizon makes truncation bias negligible relative
    to the tail mass itself (the integrand past T is bounded by the
    survival weight times a slowly varying factor).
    """
    if not 0.0 < tail < 1.0:
        raise ValueError(f"tail must lie in (0, 1), got {tail}")
    target = -math.log(tail)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if cumulative_hazard(mortality, hi) >= target:
            break
        hi *= 2.0
    else:
        raise RuntimeError("survival weight never reached the requested tail")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cumulative_hazard(mortality, mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


def _discount_tables(
    params: ModelParameters, mortality: MortalityModel, dt: float, n_steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step survival-weighted discounts and annuitization coefficients.

    Returns (w, A) with w[s] = e^{-(beta t_s + H(t_s))} and
    A[s] = k_s^{1-gamma1} / (rho_s (1-gamma1)), rho_s = beta +
    delta(age + t_s), so that stopping at step s with wealth x earns
    w[s] * A[s] * x^{1-gamma1}.
    """
    gamma1 = derive_gamma1(params)
    w = np.empty(n_steps + 1)
    a = np.empty(n_steps + 1)
    for s in range(n_steps + 1):
        t = s * dt
        w[s] = math.exp(-(params.beta * t + cumulative_hazard(mortality, t)))
        rho = params.beta + force_of_mortality(mortality, t)
        k = conversion_factors(params, rho).k
        a[s] = k ** (1.0 - gamma1) / (rho * (1.0 - gamma1))
    return w, a


def _kahan_scatter(total: np.ndarray, comp: np.ndarray, idx: np.ndarray, inc: np.ndarray) -> None:
    """total[idx] += inc with Kahan compensation carried in comp[idx]."""
    y = inc - comp[idx]
    t = total[idx] + y
    comp[idx] = (t - total[idx]) - y
    total[idx] = t


class _NoiseBank:
    """Per-block Philox streams with a fixed per-step consumption layout.

    Block j's stream is seeded by (seed, j) alone; every step consumes
    ``refine`` rows of half-width (antithetic) or full-width draws for
    the *whole* block regardless of which paths are active, so the
    increments any surviving path sees are a pure function of
    (seed, path index, time interval).  Once a block has no active
    paths its stream is simply never advanced again, which cannot
    affect any other block.  Summing the ``refine`` rows reproduces the
    Brownian path of a finer run whose step is dt/refine, enabling
    common-random-number step-size comparisons.
    """

    def __init__(self, seed: int, n_paths: int, antithetic: bool, refine: int):
        if refine < 1:
            raise ValueError(f"noise_refinement must be >= 1, got {refine}")
        self.antithetic = antithetic
        self.refine = refine
        self.n_paths = n_paths
        self.n_blocks = (n_paths + _BLOCK - 1) // _BLOCK
        self.gens = [
            np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, j))))
            for j in range(self.n_blocks)
        ]
        self.scale = 1.0 / math.sqrt(refine)
        self.buffer = np.empty(n_paths)

    def draw(self, block_alive: np.ndarray) -> np.ndarray:
        """One step's standard-normal increments for all paths."""
        half = _BLOCK // 2
        for j in range(self.n_blocks):
            if not block_alive[j]:
                continue
            lo = j * _BLOCK
            size = min(_BLOCK, self.n_paths - lo)
            if self.antithetic:
                rows = self.gens[j].standard_normal((self.refine, half))
                zh = rows.sum(axis=0) * self.scale if self.refine > 1 else rows[0]
                block = np.empty(_BLOCK)
                block[0::2] = zh
                block[1::2] = -zh
            else:
                rows = self.gens[j].standard_normal((self.refine, _BLOCK))
                block = rows.sum(axis=0) * self.scale if self.refine > 1 else rows[0]
            self.buffer[lo : lo + size] = block[:size]
        return self.buffer


def _run(
    params: ModelParameters,
    mortality: MortalityModel,
    policy,
    x0: float,
    cfg: SimConfig,
    *,
    noise_refinement: int = 1,
    n_record: int = 0,
    compute_reward: bool = True,
    terminal_value: ValueTable | None = None,
) -> tuple[np.ndarray, np.ndarray, PathSample | None]:
    """Shared Euler engine behind the two public simulators.

    Returns (per-path objective, per-path status, optional recording);
    status is 0 = truncated at the horizon (or, with ``terminal_value``,
    valued there by the table), 1 = retired, 2 = insolvent.
    """
    if not math.isfinite(x0):
        raise ValueError(f"x0 must be finite, got {x0}")
    floor = solvency_floor(params)
    if x0 <= floor:
        raise ValueError(f"x0 = {x0} is at or below the solvency floor {floor}")
    gamma1 = derive_gamma1(params)
    if gamma1 == 1.0:
        raise ValueError("gamma1 = 1 (log utility) is outside this engine's domain")
    n = cfg.n_paths
    n_steps = cfg.n_steps
    dt = cfg.dt
    sqrt_dt = math.sqrt(dt)
    threshold = float(policy.retire_threshold)
    has_reward_table = (
        getattr(policy, "utility", None) is not None
        and hasattr(policy, "lookup_with_reward")
    )

    wdisc, acoef = _discount_tables(params, mortality, dt, n_steps)
    # Trapezoid weight for the running reward: the controls are frozen
    # over [t_s, t_s + dt] but the discount factor is known in closed
    # form, so averaging its endpoints removes the O(dt) quadrature
    # bias that a left-point rule would add on top of the Euler error.
    wbar = 0.5 * (wdisc[:-1] + wdisc[1:])
    one_m_g1 = 1.0 - gamma1
    exp_b = gamma1 - params.gamma
    inv_1mg1 = 1.0 / one_m_g1
    sig_theta = params.sigma * params.theta

    X = np.full(n, float(x0))
    status = np.zeros(n, dtype=np.int8)
    J = np.zeros(n)
    J_comp = np.zeros(n)
    idx = np.arange(n)
    block_alive = np.ones((n + _BLOCK - 1) // _BLOCK, dtype=bool)
    active_per_block = np.zeros(block_alive.size, dtype=np.int64)
    np.add.at(active_per_block, idx // _BLOCK, 1)
    bank = _NoiseBank(cfg.seed, n, cfg.antithetic, noise_refinement)

    recording = None
    if n_record:
        if n_record > n:
            raise ValueError(f"n_record = {n_record} exceeds n_paths = {n}")
        stride = max(1, n_steps // 2000)
        rec_steps = list(range(0, n_steps + 1, stride))
        if rec_steps[-1] != n_steps:
            rec_steps.append(n_steps)
        rec_lookup = {s: i for i, s in enumerate(rec_steps)}
        recording = {
            "times": np.array([s * dt for s in rec_steps]),
            "wealth": np.empty((n_record, len(rec_steps))),
            "consumption": np.empty((n_record, len(rec_steps))),
            "labor": np.empty((n_record, len(rec_steps))),
            "investment": np.empty((n_record, len(rec_steps))),
            "retired": np.zeros((n_record, len(rec_steps)), dtype=bool),
        }
        rec_c = np.zeros(n_record)
        rec_b = np.zeros(n_record)
        rec_pi = np.zeros(n_record)
        rec_retired = np.zeros(n_record, dtype=bool)
        pi_ret_coef = params.theta / (params.sigma * gamma1)

    def _retire_recorded(local: np.ndarray, step: int) -> None:
        # Annuity payout locked in at the age reached when stopping.
        kpay = conversion_factors(
            params, params.beta + force_of_mortality(mortality, step * dt)
        ).k
        rec_retired[local] = True
        rec_c[local] = kpay * X[local]
        rec_b[local] = 0.0
        rec_pi[local] = pi_ret_coef * X[local]

    final_step = n_steps
    for s in range(n_steps + 1):
        x_act = X[idx]
        crossed = x_act >= threshold
        if crossed.any():
            stopped = idx[crossed]
            if compute_reward:
                reward = wdisc[s] * acoef[s] * X[stopped] ** one_m_g1
                _kahan_scatter(J, J_comp, stopped, reward)
            status[stopped] = 1
            np.add.at(active_per_block, stopped // _BLOCK, -1)
            if recording is not None:
                rec_stop = stopped[stopped < n_record]
                if rec_stop.size:
                    _retire_recorded(rec_stop, s)
            idx = idx[~crossed]
            x_act = x_act[~crossed]
        if s == n_steps or idx.size == 0:
            if terminal_value is not None and compute_reward and idx.size:
                # Bootstrapped horizon: still-active paths collect the
                # discounted continuation value instead of being cut off.
                _kahan_scatter(J, J_comp, idx, wdisc[s] * terminal_value.lookup(X[idx]))
            if recording is not None and s in rec_lookup:
                _record(recording, rec_lookup[s], X, rec_c, rec_b, rec_pi, rec_retired, n_record)
            final_step = s
            break

        if has_reward_table and compute_reward:
            c, b, pi, u = policy.lookup_with_reward(x_act)
        else:
            c, b, pi = policy.lookup(x_act)
            u = None
        if compute_reward:
            if u is None:
                with np.errstate(divide="ignore"):
                    u = c**one_m_g1 * b**exp_b * inv_1mg1
            _kahan_scatter(J, J_comp, idx, (wbar[s] * dt) * u)
        if recording is not None:
            rec_active = idx < n_record
            if rec_active.any():
                local = idx[rec_active]
                rec_c[local] = c[rec_active]
                rec_b[local] = b[rec_active]
                rec_pi[local] = pi[rec_active]
            if s in rec_lookup:
                _record(recording, rec_lookup[s], X, rec_c, rec_b, rec_pi, rec_retired, n_record)

        z = bank.draw(block_alive)[idx]
        X[idx] = (
            x_act
            + (params.r * x_act + pi * sig_theta + params.w * (params.b_bar - b) - c) * dt
            + (sqrt_dt * params.sigma) * pi * z
        )
        broke = X[idx] <= floor
        if broke.any():
            absorbed = idx[broke]
            status[absorbed] = 2
            np.add.at(active_per_block, absorbed // _BLOCK, -1)
            if recording is not None:
                rec_broke = absorbed[absorbed < n_record]
                if rec_broke.size:
                    rec_c[rec_broke] = 0.0
                    rec_b[rec_broke] = 0.0
                    rec_pi[rec_broke] = 0.0
            idx = idx[~broke]
        block_alive = active_per_block > 0

    if recording is not None:
        for step, slot in rec_lookup.items():
            if step > final_step:
                _record(recording, slot, X, rec_c, rec_b, rec_pi, rec_retired, n_record)
        sample = PathSample(
            times=recording["times"],
            wealth=recording["wealth"],
            consumption=recording["consumption"],
            labor=recording["labor"],
            investment=recording["investment"],
            retired=recording["retired"],
        )
    else:
        sample = None
    return J, status, sample


def _record(recording, slot, X, rec_c, rec_b, rec_pi, rec_retired, n_record) -> None:
    recording["wealth"][:, slot] = X[:n_record]
    recording["consumption"][:, slot] = rec_c
    recording["labor"][:, slot] = rec_b
    recording["investment"][:, slot] = rec_pi
    recording["retired"][:, slot] = rec_retired


def simulate_objective(
    params: ModelParameters,
    mortality: MortalityModel,
    policy,
    x0: float,
    cfg: SimConfig,
    *,
    noise_refinement: int = 1,
    terminal_value: ValueTable | None = None,
) -> SimResult:
    """Estimate the lifetime objective of ``policy`` started at wealth x0.

    ``policy`` is any object with ``lookup(x) -> (c, b, pi)`` over
    wealth arrays and a ``retire_threshold`` attribute (see
    TabulatedPolicy).  The estimate and its standard error come from
    antithetic pair means when cfg.antithetic is set, from raw path
    values otherwise; either way the reductions use compensated
    summation and the result is bit-reproducible for a fixed config.

    ``terminal_value`` supplies continuation values at the horizon (see
    ValueTable); without it, paths that outlive the horizon are
    truncated, which is only sound when the discount weight there is
    negligible.

    Warns with InsolvencyDominant when more than 10% of paths hit the
    solvency floor, and logs a warning when a plain-truncation horizon
    cuts off a non-negligible fraction of still-surviving paths.
    """
    J, status, _ = _run(
        params,
        mortality,
        policy,
        x0,
        cfg,
        noise_refinement=noise_refinement,
        terminal_value=terminal_value,
    )
    return _summarize(
        J, status, params, mortality, cfg, bootstrapped=terminal_value is not None
    )


def _summarize(
    J: np.ndarray,
    status: np.ndarray,
    params: ModelParameters,
    mortality: MortalityModel,
    cfg: SimConfig,
    label: str = "",
    bootstrapped: bool = False,
) -> SimResult:
    """Reduce per-path objectives to a SimResult (compensated sums)."""
    n = cfg.n_paths
    if cfg.antithetic:
        samples = 0.5 * (J[0::2] + J[1::2])
    else:
        samples = J
    m = samples.size
    mean = math.fsum(samples) / m
    if m > 1:
        var = math.fsum((s - mean) ** 2 for s in samples) / (m - 1)
        se = math.sqrt(var / m)
    else:
        se = float("inf")

    frac_ret = int(np.count_nonzero(status == 1)) / n
    frac_ins = int(np.count_nonzero(status == 2)) / n
    tag = f" [{label}]" if label else ""
    if frac_ins > 0.10:
        warnings.warn(
            f"{100.0 * frac_ins:.1f}% of paths{tag} were absorbed at the "
            "solvency floor; the objective mostly measures the absorption rule",
            InsolvencyDominant,
            stacklevel=3,
        )
    unresolved = 1.0 - frac_ret - frac_ins
    tail_weight = math.exp(
        -(params.beta * cfg.horizon + cumulative_hazard(mortality, cfg.horizon))
    )
    if unresolved > 1e-3 and tail_weight >= 1e-6 and not bootstrapped:
        log.warning(
            "horizon %g truncated %.2f%% of paths%s while the discount weight "
            "there is still %.2e; the absolute estimate is biased toward zero "
            "(comparisons under common random numbers share the bias)",
            cfg.horizon,
            100.0 * unresolved,
            tag,
            tail_weight,
        )
    return SimResult(
        J_estimate=mean,
        std_error=se,
        fraction_retired=frac_ret,
        fraction_insolvent=frac_ins,
    )


def simulate_family(
    params: ModelParameters,
    mortality: MortalityModel,
    policies: dict[str, TabulatedPolicy],
    x0: float,
    cfg: SimConfig,
    *,
    noise_refinement: int = 1,
    terminal_value: ValueTable | None = None,
    dtype: type = np.float64,
) -> dict[str, SimResult]:
    """Value several tabulated policies on one shared set of noise paths.

    All policies advance in lockstep through the same per-step draws
    (the strongest form of common random numbers: literally one shared
    increment array), so differences between their objective estimates
    carry far less Monte Carlo noise than independent runs would, and
    the per-step Python cost is paid once instead of once per policy.
    Returns one SimResult per input key.  Requires table-backed
    policies (the TabulatedPolicy interface), since the controls of all
    policies are gathered from padded table stacks.

    ``terminal_value`` supplies continuation values for paths still
    running at the horizon (see ValueTable); without it such paths are
    truncated.  ``dtype`` selects the state/control precision: float32
    roughly halves the runtime at scale while objective accumulation
    stays in float64, which moves absolute estimates by far less than
    one standard error at typical path counts.  Running rewards are
    accumulated per path in plain float64 -- each increment is O(dt),
    so the uncompensated rounding is orders of magnitude below Monte
    Carlo noise -- and the final cross-path reductions are compensated.
    """
    if not policies:
        raise ValueError("policies must be a non-empty mapping")
    names = list(policies)
    pols = [policies[name] for name in names]
    n_pol = len(pols)
    floor = solvency_floor(params)
    if x0 <= floor:
        raise ValueError(f"x0 = {x0} is at or below the solvency floor {floor}")
    gamma1 = derive_gamma1(params)
    if gamma1 == 1.0:
        raise ValueError("gamma1 = 1 (log utility) is outside this engine's domain")
    one_m_g1 = 1.0 - gamma1
    exp_b = gamma1 - params.gamma
    inv_1mg1 = 1.0 / one_m_g1
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")

    n = cfg.n_paths
    n_steps = cfg.n_steps
    dt = cfg.dt

    # Stack per-policy tables into (n_pol, max_len) arrays, padding the
    # tail with each table's last entry (lookups clamp there anyway).
    # The income table folds the whole deterministic drift increment
    # w (b_bar - b) - c times dt; gathers run on the flattened tables
    # with per-policy row offsets, which is measurably faster than
    # two-axis fancy indexing.
    max_len = max(p.consumption.size for p in pols)
    inc_tab = np.empty((n_pol, max_len), dtype=dtype)
    pi_tab = np.empty((n_pol, max_len), dtype=dtype)
    u_tab = np.empty((n_pol, max_len), dtype=dtype)
    x_lo_col = np.empty((n_pol, 1), dtype=dtype)
    inv_h_col = np.empty((n_pol, 1), dtype=dtype)
    hi_f_col = np.empty((n_pol, 1), dtype=dtype)
    thresh_col = np.empty((n_pol, 1), dtype=dtype)
    for p_i, pol in enumerate(pols):
        m = pol.consumption.size
        inc_tab[p_i, :m] = (
            params.w * (params.b_bar - pol.labor) - pol.consumption
        ) * dt
        inc_tab[p_i, m:] = inc_tab[p_i, m - 1]
        pi_tab[p_i, :m] = pol.investment
        pi_tab[p_i, m:] = pol.investment[-1]
        if pol.utility is not None:
            u_tab[p_i, :m] = pol.utility
        else:
            with np.errstate(divide="ignore"):
                u_tab[p_i, :m] = (
                    pol.consumption**one_m_g1 * pol.labor**exp_b * inv_1mg1
                )
        u_tab[p_i, m:] = u_tab[p_i, m - 1]
        x_lo_col[p_i, 0] = pol.x_lo
        inv_h_col[p_i, 0] = 1.0 / pol.spacing
        hi_f_col[p_i, 0] = m - 2
        thresh_col[p_i, 0] = pol.retire_threshold
    inc_flat = inc_tab.ravel()
    pi_flat = pi_tab.ravel()
    u_flat = u_tab.ravel()
    base_col = (np.arange(n_pol, dtype=np.intp) * max_len)[:, None]

    wdisc, acoef = _discount_tables(params, mortality, dt, n_steps)
    wbar_dt = 0.5 * (wdisc[:-1] + wdisc[1:]) * dt
    sig_theta_dt = params.sigma * params.theta * dt
    r_dt = params.r * dt
    diff_coef = params.sigma * math.sqrt(dt)

    shape = (n_pol, n)
    X = np.full(shape, x0, dtype=dtype)
    status = np.zeros(shape, dtype=np.int8)
    J = np.zeros(shape)
    active = np.ones(shape, dtype=bool)
    active_per_block = np.zeros((n + _BLOCK - 1) // _BLOCK, dtype=np.int64)
    sizes = np.minimum(_BLOCK, n - _BLOCK * np.arange(active_per_block.size))
    active_per_block[:] = n_pol * sizes
    block_alive = active_per_block > 0
    bank = _NoiseBank(cfg.seed, n, cfg.antithetic, noise_refinement)

    # Preallocated work buffers; every step writes into these in place,
    # so the hot loop allocates nothing.
    frac = np.empty(shape, dtype=dtype)
    w0 = np.empty(shape, dtype=dtype)
    fi = np.empty(shape, dtype=np.intp)
    fi1 = np.empty(shape, dtype=np.intp)
    g0 = np.empty(shape, dtype=dtype)
    g1 = np.empty(shape, dtype=dtype)
    u = np.empty(shape, dtype=dtype)
    pi = np.empty(shape, dtype=dtype)
    inc = np.empty(shape, dtype=dtype)
    dX = np.empty(shape, dtype=dtype)
    mask = np.empty(shape, dtype=bool)
    zrow = np.empty(n, dtype=dtype)

    for s in range(n_steps + 1):
        np.greater_equal(X, thresh_col, out=mask)
        np.logical_and(mask, active, out=mask)
        if mask.any():
            rows, cols = np.nonzero(mask)
            xs = X[rows, cols].astype(np.float64)
            J[rows, cols] += wdisc[s] * acoef[s] * xs**one_m_g1
            status[rows, cols] = 1
            active[rows, cols] = False
            np.add.at(active_per_block, cols // _BLOCK, -1)
            block_alive = active_per_block > 0
        if s == n_steps or not active.any():
            if terminal_value is not None and s == n_steps and active.any():
                rows, cols = np.nonzero(active)
                xs = X[rows, cols].astype(np.float64)
                J[rows, cols] += wdisc[s] * terminal_value.lookup(xs)
            break

        # Locate each (policy, path) pair on its table: clamped floor
        # index plus fractional offset, all in the working dtype.
        np.subtract(X, x_lo_col, out=frac)
        np.multiply(frac, inv_h_col, out=frac)
        np.floor(frac, out=g0)
        np.clip(g0, 0.0, hi_f_col, out=g0)
        np.copyto(fi, g0, casting="unsafe")
        np.subtract(frac, g0, out=frac)
        np.clip(frac, 0.0, 1.0, out=frac)
        np.subtract(1.0, frac, out=w0)
        np.add(fi, base_col, out=fi)
        np.add(fi, 1, out=fi1)

        # Linear interpolation via flat gathers.
        np.take(u_flat, fi, out=g0, mode="clip")
        np.take(u_flat, fi1, out=g1, mode="clip")
        np.multiply(g0, w0, out=u)
        np.multiply(g1, frac, out=g1)
        np.add(u, g1, out=u)
        np.take(pi_flat, fi, out=g0, mode="clip")
        np.take(pi_flat, fi1, out=g1, mode="clip")
        np.multiply(g0, w0, out=pi)
        np.multiply(g1, frac, out=g1)
        np.add(pi, g1, out=pi)
        np.take(inc_flat, fi, out=g0, mode="clip")
        np.take(inc_flat, fi1, out=g1, mode="clip")
        np.multiply(g0, w0, out=inc)
        np.multiply(g1, frac, out=g1)
        np.add(inc, g1, out=inc)

        # Running reward (inactive pairs contribute exactly zero).
        np.multiply(u, float(wbar_dt[s]), out=u)
        np.multiply(u, active, out=u)
        np.add(J, u, out=J)

        # Euler increment; frozen (inactive) paths get dX = 0.
        z = bank.draw(block_alive)
        np.multiply(z, diff_coef, out=zrow)
        np.multiply(pi, zrow, out=dX)
        np.multiply(pi, sig_theta_dt, out=g0)
        np.add(dX, g0, out=dX)
        np.multiply(X, r_dt, out=g1)
        np.add(dX, g1, out=dX)
        np.add(dX, inc, out=dX)
        np.multiply(dX, active, out=dX)
        np.add(X, dX, out=X)

        np.less_equal(X, floor, out=mask)
        np.logical_and(mask, active, out=mask)
        if mask.any():
            rows, cols = np.nonzero(mask)
            status[rows, cols] = 2
            active[rows, cols] = False
            np.add.at(active_per_block, cols // _BLOCK, -1)
            block_alive = active_per_block > 0

    bootstrapped = terminal_value is not None
    return {
        name: _summarize(
            J[p_i], status[p_i], params, mortality, cfg,
            label=name, bootstrapped=bootstrapped,
        )
        for p_i, name in enumerate(names)
    }


@dataclass(frozen=True)
class DominanceReport:
    """Outcome of the perturbation-dominance comparison.

    ``gaps`` maps each perturbation name to (J_optimal - J_perturbed,
    2 * combined standard error); ``passed`` is True when every gap
    clears -bar, i.e. no perturbation beats the closed-form policy by
    more than twice the combined standard error.
    """

    results: dict[str, SimResult]
    gaps: dict[str, tuple[float, float]]
    passed: bool
    horizon: float
    bootstrapped: bool


def dominance_report(
    params: ModelParameters,
    mortality: MortalityModel,
    sol: ClosedFormSolution,
    x0: float,
    cfg: SimConfig,
    *,
    n_points: int = 4097,
    noise_refinement: int = 1,
    quasi_static: bool = True,
    bootstrap: bool = True,
    dtype: type = np.float64,
) -> DominanceReport:
    """Check the closed-form policy against its standard perturbations.

    Runs the whole perturbed family (see ``perturbed_family``) on shared
    draws and evaluates the two-standard-error dominance bar for each
    member.

    ``quasi_static=True`` simulates under the age-frozen hazard: the
    stationary feedback policy solves that problem exactly, so
    dominance there is a theorem and any failure beyond noise indicates
    an engine defect.  With ``False`` the full age-varying hazard is
    kept, where the closed-form policy is only an approximation and
    measured shortfalls quantify its quality instead.

    ``bootstrap=True`` tabulates the closed-form value function and
    applies it as the terminal condition, which keeps the comparison
    valid at short horizons: following a perturbation to the horizon
    and the optimal policy afterwards is itself an admissible strategy,
    so in the quasi-static environment its expected value cannot exceed
    the optimum's at *any* horizon.  Plain truncation (``False``)
    instead needs a horizon long enough that the remaining discount
    weight is negligible, otherwise policies that front-load
    consumption are spuriously favored.
    """
    env = frozen_hazard(mortality) if quasi_static else mortality
    family = perturbed_family(sol, n_points=n_points)
    terminal = tabulate_value(sol) if bootstrap else None
    results = simulate_family(
        params,
        env,
        family,
        x0,
        cfg,
        noise_refinement=noise_refinement,
        terminal_value=terminal,
        dtype=dtype,
    )
    ref = results["optimal"]
    gaps: dict[str, tuple[float, float]] = {}
    passed = True
    for name, res in results.items():
        if name == "optimal":
            continue
        gap = ref.J_estimate - res.J_estimate
        bar = 2.0 * math.hypot(ref.std_error, res.std_error)
        gaps[name] = (gap, bar)
        if gap < -bar:
            passed = False
    return DominanceReport(
        results=results,
        gaps=gaps,
        passed=passed,
        horizon=cfg.horizon,
        bootstrapped=bootstrap,
    )


def simulate_paths(
    params: ModelParameters,
    mortality: MortalityModel,
    policy,
    x0: float,
    cfg: SimConfig,
    n_record: int,
) -> PathSample:
    """Simulate and record the first ``n_record`` paths' trajectories.

    The recorded paths are driven by exactly the same noise as in
    ``simulate_objective`` with the same config (the recording is a
    pure observer), sampled at a fixed stride chosen to keep at most
    about 2000 records per path, with the initial and final times
    always included.
    """
    if n_record < 1:
        raise ValueError(f"n_record must be >= 1, got {n_record}")
    _, _, sample = _run(
        params, mortality, policy, x0, cfg, n_record=n_record, compute_reward=False
    )
    assert sample is not None
    return sample


def dump_paths_csv(sample: PathSample, path: str) -> None:
    """Write recorded trajectories as CSV rows (path, t, X, c, b, pi, retired).

    Floats are written with repr (shortest round-trip) precision; the
    file is replaced atomically.
    """
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "t", "X", "c", "b", "pi", "retired"])
        n_paths, n_times = sample.wealth.shape
        for p in range(n_paths):
            for j in range(n_times):
                writer.writerow(
                    [
                        p,
                        repr(float(sample.times[j])),
                        repr(float(sample.wealth[p, j])),
                        repr(float(sample.consumption[p, j])),
                        repr(float(sample.labor[p, j])),
                        repr(float(sample.investment[p, j])),
                        int(sample.retired[p, j]),
                    ]
                )
    os.replace(tmp, path)
