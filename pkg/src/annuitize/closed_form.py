"""Closed-form solution of the annuitization free-boundary problem.

Constructs, at a fixed evaluation age, the full solution of the
stationary control/stopping problem: the agent consumes c, allocates
utility-bearing time b out of the endowment b_bar (the remainder
b_bar - b is supplied as labor earning wage w), invests pi in the risky
asset, and chooses when to annuitize wealth irreversibly.  Utility is
Cobb-Douglas, u1(c, b) = c^{1-gamma1} b^{gamma1-gamma} / (1-gamma1)
with gamma1 = 1 - alpha(1-gamma), and stopping at wealth x yields
G(x) = k^{1-gamma1} x^{1-gamma1} / (rho (1-gamma1)) — the value of
consuming a fair annuity stream k*x forever.

The working-phase problem is solved in consumption coordinates.  With
V'(x) written as a power of the consumption level c, the wealth level
x = X(c) satisfies a linear Euler ODE whose homogeneous solutions are
powers c^{-gamma_reg * m} with g(m) = 0, where

    g(m) = (theta^2/2) m^2 + (rho - r + theta^2/2) m - r.

Three regimes meet at two boundaries:

- interior (0 < c <= c_tilde): time allocation b = xi*c with
  xi = (1-alpha)/(w*alpha);     X_int(c) = A2 c^{a2} + c/(alpha k) - w b_bar / r
- capped  (c_tilde <= c <= c*): b = b_post;
  X_cor(c) = B1 c^{b1} + B2 c^{b2} + c/k1 - w (b_bar - b_post)/r
- retired (x >= x*): wealth annuitized, value G(x).

The exponents are a2 = -gamma*m_minus, b1 = -gamma1*m_plus,
b2 = -gamma1*m_minus (roots of g).  The four unknowns (A2, B1, B2, x*)
are pinned down jointly by value matching at both boundaries, the
wealth-map consistency X_cor(c*) = x*, and smooth pasting at x* (baked
into c* = cstar_coef * x*); continuity of V' and V'' at x_tilde then
holds identically.  Value functions are recovered from the
pre-differentiation identity rho V = u1 + (drift) V' + diffusion term,
which is linear in the same powers of c, so no numerical integration
of V' is ever needed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .market import (
    DerivedFactors,
    ModelParameters,
    characteristic_roots,
    conversion_factors,
    derive_factors,
    derive_gamma1,
)
from .mortality import MortalityModel, cumulative_hazard, force_of_mortality
from .numerics import (
    Bracket,
    NoSignChange,
    Tolerance,
    expand_bracket,
    find_root,
    invert_monotone,
)

__all__ = [
    "ClosedFormError",
    "NonMonotoneInverse",
    "NoRetirementBoundary",
    "InconsistentBoundary",
    "BelowSolvency",
    "Diagnostic",
    "InverseWealthMap",
    "SolutionInternals",
    "ClosedFormSolution",
    "solvency_floor",
    "consumption_threshold",
    "constant_B1",
    "constant_B2",
    "constant_A2",
    "solve_x_star",
    "solve_x_tilde",
    "inverse_wealth",
    "solve",
    "value_function",
    "value_derivative",
    "consumption_from_wealth",
    "g_value",
    "g_prime",
]


class ClosedFormError(Exception):
    """Base class for closed-form assembly failures."""


class NonMonotoneInverse(ClosedFormError):
    """An inverse-wealth map failed its monotonicity scan."""


class NoRetirementBoundary(ClosedFormError):
    """No admissible retirement threshold x* could be located."""


class InconsistentBoundary(ClosedFormError):
    """The two expressions for x_tilde disagree beyond tolerance."""


class BelowSolvency(ClosedFormError):
    """Wealth at or below the solvency floor -w*b_bar/r."""


@dataclass(frozen=True)
class Diagnostic:
    """One named residual or divergence measurement.

    ``value`` is the measured number; ``detail`` says what was compared
    and which convention is authoritative when the entry records a
    divergence rather than a residual.
    """

    name: str
    value: float
    detail: str = ""


@dataclass(frozen=True)
class InverseWealthMap:
    """Wealth as a function of the consumption level on one regime.

    X(c) = sum_i coefficients[i] * c^{exponents[i]} + linear_coef*c + offset,
    strictly increasing on [c_lo, c_hi] (verified by a 1000-point
    finite-difference scan at construction).

    Parameters
    ----------
    regime : str
        "interior" or "corner".
    coefficients, exponents : tuple of float
        The power-term coefficients and their exponents.
    linear_coef, offset : float
        Slope of the linear consumption term and the constant income
        offset (present value of the regime's labor income).
    c_lo, c_hi : float
        Valid consumption interval.
    """

    regime: str
    coefficients: tuple[float, ...]
    exponents: tuple[float, ...]
    linear_coef: float
    offset: float
    c_lo: float
    c_hi: float

    def __post_init__(self) -> None:
        if len(self.coefficients) != len(self.exponents):
            raise ValueError("coefficients and exponents must pair up")
        if not self.c_lo < self.c_hi:
            raise ValueError(f"need c_lo < c_hi, got [{self.c_lo}, {self.c_hi}]")
        if self.c_lo < 0 or (self.c_lo == 0 and any(e < 0 for e in self.exponents)):
            raise ValueError("c_lo must be > 0 when any exponent is negative")
        grid = np.linspace(self.c_lo, self.c_hi, 1000)
        values = self.evaluate(grid)
        if not np.all(np.isfinite(values)):
            raise NonMonotoneInverse(f"{self.regime} map is not finite on its interval")
        if np.any(np.diff(values) <= 0.0):
            raise NonMonotoneInverse(
                f"{self.regime} map is not strictly increasing on "
                f"[{self.c_lo}, {self.c_hi}]"
            )

    def evaluate(self, c):
        """X(c); accepts scalars or numpy arrays."""
        c = np.asarray(c, dtype=float)
        x = self.linear_coef * c + self.offset
        for coef, expo in zip(self.coefficients, self.exponents):
            x = x + coef * np.power(c, expo)
        return x if x.ndim else float(x)

    def __call__(self, c: float) -> float:
        x = self.linear_coef * c + self.offset
        for coef, expo in zip(self.coefficients, self.exponents):
            x += coef * c**expo
        return x

    def derivative(self, c: float) -> float:
        """dX/dc at c."""
        s = self.linear_coef
        for coef, expo in zip(self.coefficients, self.exponents):
            s += coef * expo * c ** (expo - 1.0)
        return s

    def invert(self, x: float, tol: Tolerance | None = None) -> float:
        """Consumption level c with X(c) = x."""
        return invert_monotone(
            self.__call__, x, Bracket(self.c_lo, self.c_hi), tol or Tolerance()
        )


@dataclass(frozen=True)
class SolutionInternals:
    """Every scalar of the assembled solution, in one immutable bundle.

    Exponents and multipliers follow the module docstring's notation;
    ``rho`` is the effective discount entering the working-phase ODEs,
    ``rho_g`` the rate in the stopped value G (identical under the
    default "instantaneous" convention).
    """

    r: float
    theta: float
    sigma: float
    alpha: float
    w: float
    b_bar: float
    b_post: float
    gamma: float
    gamma1: float
    rho: float
    rho_g: float
    k: float
    k1: float
    mg_plus: float
    mg_minus: float
    a2: float
    b1: float
    b2: float
    lam_plus: float
    lam_minus: float
    omega_int: float
    omega_cor: float
    xi: float
    c_tilde: float
    K_v: float
    K_cor: float
    E: float
    floor: float
    corner_offset: float
    cstar_coef: float
    retired_c_coef: float
    A2: float
    B1: float
    B2: float
    x_star: float
    c_star: float
    x_tilde: float

    # -- wealth maps (raw formulas; the monotonicity-checked map objects
    #    live on ClosedFormSolution) -------------------------------------
    def x_interior(self, c: float) -> float:
        return self.A2 * c**self.a2 + self.E * c + self.floor

    def x_corner(self, c: float) -> float:
        return (
            self.B1 * c**self.b1
            + self.B2 * c**self.b2
            + c / self.k1
            + self.corner_offset
        )

    def dx_interior(self, c: float) -> float:
        return self.A2 * self.a2 * c ** (self.a2 - 1.0) + self.E

    def dx_corner(self, c: float) -> float:
        return (
            self.B1 * self.b1 * c ** (self.b1 - 1.0)
            + self.B2 * self.b2 * c ** (self.b2 - 1.0)
            + 1.0 / self.k1
        )

    # -- value recovery (pre-differentiation identity) -------------------
    def v_interior(self, c: float) -> float:
        return (self.K_v / self.rho) * (
            self.lam_minus * self.A2 * c ** (self.a2 - self.gamma)
            + self.omega_int * c ** (1.0 - self.gamma)
        )

    def v_corner(self, c: float) -> float:
        return (self.K_cor / self.rho) * (
            self.lam_plus * self.B1 * c ** (self.b1 - self.gamma1)
            + self.lam_minus * self.B2 * c ** (self.b2 - self.gamma1)
            + self.omega_cor * c ** (1.0 - self.gamma1)
        )

    def vprime_interior(self, c: float) -> float:
        return self.K_v * c ** (-self.gamma)

    def vprime_corner(self, c: float) -> float:
        return self.K_cor * c ** (-self.gamma1)

    # -- stopped value ----------------------------------------------------
    def g(self, x: float) -> float:
        return (
            self.k ** (1.0 - self.gamma1)
            * x ** (1.0 - self.gamma1)
            / (self.rho_g * (1.0 - self.gamma1))
        )

    def g_prime(self, x: float) -> float:
        return self.k ** (1.0 - self.gamma1) * x ** (-self.gamma1) / self.rho_g


@dataclass(frozen=True)
class ClosedFormSolution:
    """The solved model at one evaluation age.

    Carries the headline quantities (thresholds, coefficients,
    diagnostics) plus the monotonicity-checked inverse-wealth maps and
    the full scalar bundle in ``internals``.
    """

    eval_age: float
    rho_eff: float
    factors: DerivedFactors
    c_tilde: float
    B1: float
    B2: float
    A2: float
    x_tilde: float
    x_star: float
    solvency_floor: float
    consistency_report: tuple[Diagnostic, ...]
    params: ModelParameters
    mortality: MortalityModel
    c_star: float
    interior_map: InverseWealthMap
    corner_map: InverseWealthMap
    internals: SolutionInternals


def solvency_floor(params: ModelParameters) -> float:
    """Lowest admissible wealth -w*b_bar/r: the present value of the
    maximum labor income stream, pledgeable against debt."""
    return -params.w * params.b_bar / params.r


def consumption_threshold(params: ModelParameters) -> float:
    """Consumption level c_tilde where the time allocation hits its cap.

    The interior allocation is b = xi*c with xi = (1-alpha)/(w*alpha),
    so the cap b_post binds at c_tilde = (w*alpha/(1-alpha)) * b_post
    (equal to the b_bar form when b_post = b_bar, the default).
    """
    return (params.w * params.alpha / (1.0 - params.alpha)) * params.b_post


# ---------------------------------------------------------------------------
# Direct-formula ("printed") constant evaluators.  These implement the
# sequential closed-chain expressions with the exposed quadratic's roots
# (constant term -rho).  The jointly solved system below is authoritative;
# divergences between the two are reported in consistency_report.
# ---------------------------------------------------------------------------


def _half_spread(params: ModelParameters, factors: DerivedFactors) -> float:
    spread = factors.m_plus - factors.m_minus
    if abs(spread) < 1e-14:
        raise ClosedFormError(
            "m_plus == m_minus: the exponent quadratic has a double root"
        )
    return 0.5 * params.theta**2 * spread


def _printed_B1(params: ModelParameters, factors: DerivedFactors, c_tilde: float) -> float:
    """Closed-chain B1 from the conditions at x_tilde (direct formula)."""
    rho = factors.rho_eff
    half = _half_spread(params, factors)
    lam_m = params.r - 0.5 * params.theta**2 * factors.m_minus
    ak = params.alpha * factors.k
    term1 = (rho * c_tilde ** (factors.gamma1 * factors.m_plus) / half) * (
        (lam_m / rho) * (1.0 / ak - 1.0 / factors.k1) * c_tilde
        - params.w * params.b_bar / params.r
    )
    term2 = (1.0 / (1.0 - factors.gamma1)) * (1.0 / factors.k1 - 1.0 / ak) * c_tilde
    return term1 + term2


def constant_B2(params: ModelParameters, factors: DerivedFactors, x_star: float) -> float:
    """Coefficient B2 from the direct formula at x*.

    This is the closed-chain expression in which every term carries a
    factor that vanishes when b_post = b_bar, so the default
    configuration gives B2 = 0 exactly.  The jointly solved system
    retains a small but substantive B2 even at the default; the solved
    value is what ClosedFormSolution stores, and the divergence is
    recorded in consistency_report.
    """
    rho = factors.rho_eff
    half = _half_spread(params, factors)
    lam_p = params.r - 0.5 * params.theta**2 * factors.m_plus
    ratio = params.b_bar / params.b_post  # (b_bar / b)
    gap = factors.gamma1 - params.gamma
    pref = (
        rho
        * factors.k1 ** (factors.gamma1 * factors.m_minus)
        * ratio ** (-factors.m_minus * gap)
        / half
    ) * x_star ** (factors.gamma1 * factors.m_minus)
    shape = 1.0 - ratio ** (-gap / factors.gamma1)
    income = params.w * (params.b_bar - params.b_post) / params.r
    bracket = (-lam_p / rho) * (shape * x_star + income) + (
        1.0 / (1.0 - factors.gamma1)
    ) * shape * x_star
    return pref * bracket


def _printed_A2(
    params: ModelParameters, factors: DerivedFactors, c_tilde: float, B2: float
) -> float:
    """Closed-chain A2 from the conditions at x_tilde (direct formula)."""
    rho = factors.rho_eff
    half = _half_spread(params, factors)
    lam_p = params.r - 0.5 * params.theta**2 * factors.m_plus
    ak = params.alpha * factors.k
    gap = factors.gamma1 - params.gamma
    return (
        B2 * c_tilde ** (-factors.m_minus * gap)
        - (rho * c_tilde ** (params.gamma * factors.m_minus) / half)
        * (
            (lam_p / rho) * (1.0 / factors.k1 - 1.0 / ak) * c_tilde
            + params.w * params.b_bar / params.r
        )
        + (1.0 / (1.0 - factors.gamma1)) * (1.0 / ak - 1.0 / factors.k1) * c_tilde
    )


def _printed_x_star_gap(
    params: ModelParameters, factors: DerivedFactors, B1: float, x_star: float
) -> float:
    """Normalized residual of the direct-formula threshold equation.

    Evaluates the one-equation form (power term in x* on the left,
    affine part on the right) with the exposed quadratic's roots and the
    supplied B1, normalized by the affine coefficient.  Nonzero values
    record the divergence between the direct formula and the jointly
    solved boundary system.
    """
    rho = factors.rho_eff
    half = _half_spread(params, factors)
    lam_m = params.r - 0.5 * params.theta**2 * factors.m_minus
    gap = factors.gamma1 - params.gamma
    ratio = params.b_post / params.b_bar  # (b / b_bar)
    lhs = (
        (half / rho)
        * B1
        * factors.k ** (-factors.gamma1 * factors.m_plus)
        * ratio ** (factors.m_plus * gap)
        * x_star ** (-factors.gamma1 * factors.m_plus)
    )
    shape = 1.0 - ratio ** (-gap / factors.gamma1)
    coef = lam_m / rho - shape / (1.0 - factors.gamma1)
    rhs = coef * x_star + (lam_m / rho) * params.w * (params.b_bar - params.b_post) / params.r
    return (lhs - rhs) / max(abs(coef), 1e-300)


# ---------------------------------------------------------------------------
# The joint boundary system.
# ---------------------------------------------------------------------------


def _static_internals(params: ModelParameters, rho: float, rho_g: float) -> dict:
    """Everything derivable before the boundary system is solved."""
    if params.w <= 0:
        raise ValueError("w must be > 0 for the working-phase solution")
    gamma = params.gamma
    gamma1 = derive_gamma1(params)
    k, k1 = conversion_factors(params, rho)
    g_roots = characteristic_roots(params, rho)
    mg_p, mg_m = g_roots.m_plus, g_roots.m_minus
    theta2 = params.theta**2
    xi = (1.0 - params.alpha) / (params.w * params.alpha)
    c_tilde = params.b_post / xi
    power = (1.0 - params.alpha) * (1.0 - gamma)  # = gamma1 - gamma
    return {
        "gamma": gamma,
        "gamma1": gamma1,
        "k": k,
        "k1": k1,
        "mg_plus": mg_p,
        "mg_minus": mg_m,
        "a2": -gamma * mg_m,
        "b1": -gamma1 * mg_p,
        "b2": -gamma1 * mg_m,
        "lam_plus": params.r - 0.5 * theta2 * mg_p,
        "lam_minus": params.r - 0.5 * theta2 * mg_m,
        "omega_int": (1.0 / params.alpha)
        * (1.0 / (1.0 - gamma) - 1.0 + (params.r + theta2 / (2.0 * gamma)) / k),
        "omega_cor": 1.0 / (1.0 - gamma1)
        - 1.0
        + (params.r + theta2 / (2.0 * gamma1)) / k1,
        "xi": xi,
        "c_tilde": c_tilde,
        "K_v": xi**power,
        "K_cor": params.b_post**power,
        "E": 1.0 / (params.alpha * k),
        "floor": -params.w * params.b_bar / params.r,
        "corner_offset": -params.w * (params.b_bar - params.b_post) / params.r,
        "cstar_coef": (rho_g * params.b_post**power * k ** (gamma1 - 1.0))
        ** (1.0 / gamma1),
        "retired_c_coef": (rho_g * k ** (gamma1 - 1.0)) ** (1.0 / gamma1),
    }


def _system_at(s: dict, rho: float, rho_g: float, x_star: float) -> dict:
    """Coefficients implied by a trial x*, with the junction residual.

    Smooth pasting is baked into c* = cstar_coef * x*.  A 2x2 linear
    solve in the rescaled unknowns (B1 c*^{b1}, B2 c*^{b2}) imposes
    value matching and map consistency at x*; A2 then comes from value
    matching at c_tilde (marginal-value continuity there is an algebraic
    identity).  The returned residual is the wealth-map mismatch at
    c_tilde, the one condition left for the outer root-find.
    """
    gamma, gamma1 = s["gamma"], s["gamma1"]
    c_star = s["cstar_coef"] * x_star
    ct = s["c_tilde"]
    # Value matching at x*:  lam_plus*beta1 + lam_minus*beta2 = rho*x*/(1-gamma1) - omega_cor*c*
    rhs_vm = rho * x_star / (1.0 - gamma1) - s["omega_cor"] * c_star
    # Map consistency X_cor(c*) = x*:  beta1 + beta2 = x* - c*/k1 - corner_offset
    rhs_map = x_star - c_star / s["k1"] - s["corner_offset"]
    det = s["lam_plus"] - s["lam_minus"]
    beta1 = (rhs_vm - s["lam_minus"] * rhs_map) / det
    beta2 = (s["lam_plus"] * rhs_map - rhs_vm) / det
    B1 = beta1 * c_star ** (-s["b1"])
    B2 = beta2 * c_star ** (-s["b2"])
    v_cor_ct = (s["K_cor"] / rho) * (
        s["lam_plus"] * B1 * ct ** (s["b1"] - gamma1)
        + s["lam_minus"] * B2 * ct ** (s["b2"] - gamma1)
        + s["omega_cor"] * ct ** (1.0 - gamma1)
    )
    A2 = (rho / s["K_v"] * v_cor_ct - s["omega_int"] * ct ** (1.0 - gamma)) / (
        s["lam_minus"] * ct ** (s["a2"] - gamma)
    )
    x_int_ct = A2 * ct ** s["a2"] + s["E"] * ct + s["floor"]
    x_cor_ct = B1 * ct ** s["b1"] + B2 * ct ** s["b2"] + ct / s["k1"] + s["corner_offset"]
    return {
        "A2": A2,
        "B1": B1,
        "B2": B2,
        "c_star": c_star,
        "x_tilde": x_int_ct,
        "residual": x_int_ct - x_cor_ct,
    }


def _admissible(s: dict, rho: float, rho_g: float, cand: dict, x_star: float) -> bool:
    """Reject roots of the junction residual that violate the regime
    structure: maps must be increasing, thresholds ordered, and the
    working value must dominate the stopped value on the corner region."""
    vals = [cand["A2"], cand["B1"], cand["B2"], cand["x_tilde"], cand["c_star"]]
    if not all(math.isfinite(v) for v in vals):
        return False
    ct = s["c_tilde"]
    if not ct * (1.0 + 1e-12) < cand["c_star"]:
        return False
    if not s["floor"] < cand["x_tilde"] < x_star:
        return False
    try:
        InverseWealthMap(
            regime="interior",
            coefficients=(cand["A2"],),
            exponents=(s["a2"],),
            linear_coef=s["E"],
            offset=s["floor"],
            c_lo=0.0,
            c_hi=ct,
        )
        InverseWealthMap(
            regime="corner",
            coefficients=(cand["B1"], cand["B2"]),
            exponents=(s["b1"], s["b2"]),
            linear_coef=1.0 / s["k1"],
            offset=s["corner_offset"],
            c_lo=ct,
            c_hi=cand["c_star"],
        )
    except (NonMonotoneInverse, ValueError):
        return False
    # Obstacle check: V_cor >= G on sampled corner-region wealth > 0.
    gamma1 = s["gamma1"]
    for c in np.linspace(ct, cand["c_star"], 16):
        x = (
            cand["B1"] * c ** s["b1"]
            + cand["B2"] * c ** s["b2"]
            + c / s["k1"]
            + s["corner_offset"]
        )
        if x <= 0.0:
            continue
        v_cor = (s["K_cor"] / rho) * (
            s["lam_plus"] * cand["B1"] * c ** (s["b1"] - gamma1)
            + s["lam_minus"] * cand["B2"] * c ** (s["b2"] - gamma1)
            + s["omega_cor"] * c ** (1.0 - gamma1)
        )
        g_val = (
            s["k"] ** (1.0 - gamma1) * x ** (1.0 - gamma1) / (rho_g * (1.0 - gamma1))
        )
        if v_cor < g_val - 1e-7 * max(1.0, abs(g_val)):
            return False
    return True


@lru_cache(maxsize=256)
def _solve_system(params: ModelParameters, rho: float, rho_g: float) -> SolutionInternals:
    """Solve the joint boundary system; cached per (params, rho)."""
    s = _static_internals(params, rho, rho_g)

    def residual(x_star: float) -> float:
        return _system_at(s, rho, rho_g, x_star)["residual"]

    lo = (s["c_tilde"] / s["cstar_coef"]) * (1.0 + 1e-9)
    hi = 1e6 * params.w / params.r
    if not lo < hi:
        raise NoRetirementBoundary(
            f"scan interval empty: c* coefficient forces x* > {lo}, cap is {hi}"
        )
    grid = np.geomspace(lo, hi, 480)
    res = np.array([residual(x) for x in grid])
    roots: list[float] = []
    for i in range(len(grid) - 1):
        if not (math.isfinite(res[i]) and math.isfinite(res[i + 1])):
            continue
        if res[i] == 0.0:
            roots.append(float(grid[i]))
        elif res[i] * res[i + 1] < 0.0:
            roots.append(
                find_root(
                    residual,
                    Bracket(float(grid[i]), float(grid[i + 1])),
                    Tolerance(abs_tol=1e-13, rel_tol=1e-12, max_iter=200),
                )
            )
    admissible: list[tuple[float, dict]] = []
    for x_star in roots:
        cand = _system_at(s, rho, rho_g, x_star)
        if _admissible(s, rho, rho_g, cand, x_star):
            admissible.append((x_star, cand))
    if not admissible:
        raise NoRetirementBoundary(
            "no admissible retirement threshold: the junction residual has no "
            f"root with ordered thresholds and increasing wealth maps in [{lo}, {hi}]"
        )
    x_star, cand = min(admissible, key=lambda t: t[0])
    return SolutionInternals(
        r=params.r,
        theta=params.theta,
        sigma=params.sigma,
        alpha=params.alpha,
        w=params.w,
        b_bar=params.b_bar,
        b_post=params.b_post,
        gamma=s["gamma"],
        gamma1=s["gamma1"],
        rho=rho,
        rho_g=rho_g,
        k=s["k"],
        k1=s["k1"],
        mg_plus=s["mg_plus"],
        mg_minus=s["mg_minus"],
        a2=s["a2"],
        b1=s["b1"],
        b2=s["b2"],
        lam_plus=s["lam_plus"],
        lam_minus=s["lam_minus"],
        omega_int=s["omega_int"],
        omega_cor=s["omega_cor"],
        xi=s["xi"],
        c_tilde=s["c_tilde"],
        K_v=s["K_v"],
        K_cor=s["K_cor"],
        E=s["E"],
        floor=s["floor"],
        corner_offset=s["corner_offset"],
        cstar_coef=s["cstar_coef"],
        retired_c_coef=s["retired_c_coef"],
        A2=cand["A2"],
        B1=cand["B1"],
        B2=cand["B2"],
        x_star=x_star,
        c_star=cand["c_star"],
        x_tilde=cand["x_tilde"],
    )


# ---------------------------------------------------------------------------
# Named accessors into the solved system.
# ---------------------------------------------------------------------------


def _check_c_tilde(params: ModelParameters, c_tilde: float) -> None:
    expected = consumption_threshold(params)
    if abs(c_tilde - expected) > 1e-9 * max(1.0, abs(expected)):
        raise ValueError(
            f"c_tilde = {c_tilde} does not match the threshold {expected} "
            "implied by the parameters"
        )


def constant_B1(params: ModelParameters, factors: DerivedFactors, c_tilde: float) -> float:
    """Coefficient B1 of the capped-regime wealth map.

    Returned from the jointly solved boundary system (value matching at
    both thresholds, map consistency, smooth pasting), which is the
    convention under which the x_tilde boundary conditions hold to
    numerical precision.  The direct-formula alternative is recorded in
    the solution's consistency_report.
    """
    _half_spread(params, factors)  # double-root guard
    _check_c_tilde(params, c_tilde)
    return _solve_system(params, factors.rho_eff, factors.rho_eff).B1


def constant_A2(
    params: ModelParameters, factors: DerivedFactors, c_tilde: float, B2: float
) -> float:
    """Coefficient A2 of the interior-regime wealth map (joint solve).

    ``B2`` is accepted for cross-checking: a value far from the solved
    coefficient triggers a warning, since A2 is only meaningful relative
    to the corner map it pastes onto.
    """
    _check_c_tilde(params, c_tilde)
    internals = _solve_system(params, factors.rho_eff, factors.rho_eff)
    scale = max(1.0, abs(internals.B2))
    if abs(B2 - internals.B2) > 1e-6 * scale:
        warnings.warn(
            f"supplied B2 = {B2} differs from the jointly solved {internals.B2}; "
            "the returned A2 pastes onto the solved corner map",
            stacklevel=2,
        )
    return internals.A2


def solve_x_star(params: ModelParameters, factors: DerivedFactors, B1: float) -> float:
    """Retirement threshold x* from the one-equation reduction.

    Eliminating B2 between value matching and map consistency at x*
    (with smooth pasting baked into c* = cstar_coef * x*) collapses the
    boundary system to a single equation in x* given B1:

        C1 * (x*)^{b1} = C2 * x* - lam_minus * corner_offset,

    with C1 = -theta^2/2 (m_plus - m_minus) B1 cstar_coef^{b1} and
    C2 = rho/(1-gamma1) - lam_minus + (lam_minus/k1 - omega_cor) cstar_coef.
    When b_post = b_bar the constant vanishes and the root is
    x* = (C1/C2)^{1/(1 - b1)} in closed form; the root-finder reproduces
    it to full precision.  Solved by geometric bracket expansion upward
    followed by a Newton polish; the normalized residual at the returned
    x* is below 1e-10.

    Raises
    ------
    NoRetirementBoundary
        If B1 = 0 (degenerate power term) or no sign change is found
        below the cap 1e6*w/r.
    """
    rho = factors.rho_eff
    s = _static_internals(params, rho, rho)
    if B1 == 0.0:
        raise NoRetirementBoundary("B1 = 0: threshold equation degenerates to x* = 0")
    spread = s["mg_plus"] - s["mg_minus"]
    C1 = -0.5 * params.theta**2 * spread * B1 * s["cstar_coef"] ** s["b1"]
    C2 = (
        rho / (1.0 - s["gamma1"])
        - s["lam_minus"]
        + (s["lam_minus"] / s["k1"] - s["omega_cor"]) * s["cstar_coef"]
    )
    const = -s["lam_minus"] * s["corner_offset"]

    def f(x: float) -> float:
        return C1 * x ** s["b1"] - C2 * x + const

    def fprime(x: float) -> float:
        return C1 * s["b1"] * x ** (s["b1"] - 1.0) - C2

    cap = 1e6 * params.w / params.r
    try:
        bracket = expand_bracket(f, 1e-9, 1.0)
    except NoSignChange as exc:
        raise NoRetirementBoundary(
            f"threshold equation has no sign change up to {cap}: {exc}"
        ) from exc
    if bracket.hi > cap:
        raise NoRetirementBoundary(
            f"threshold bracket [{bracket.lo}, {bracket.hi}] exceeds the cap {cap}"
        )
    x = find_root(f, bracket, Tolerance(abs_tol=1e-14, rel_tol=1e-13, max_iter=200))
    for _ in range(3):  # Newton polish to drive the normalized residual down
        step = f(x) / fprime(x)
        if not math.isfinite(step):
            break
        x -= step
    internals = _solve_system(params, rho, rho)
    if abs(B1 - internals.B1) <= 1e-8 * max(1.0, abs(internals.B1)):
        if not x > internals.x_tilde:
            raise NoRetirementBoundary(
                f"x* = {x} does not exceed x_tilde = {internals.x_tilde}"
            )
    return x


def solve_x_tilde(
    params: ModelParameters, factors: DerivedFactors, A2: float, c_tilde: float
) -> float:
    """Threshold wealth x_tilde = X_int(c_tilde), by direct evaluation.

    Cross-checks against the capped-regime expression evaluated with the
    jointly solved B1, B2 when the full system is solvable; a gap beyond
    1e-6 raises InconsistentBoundary (a constant-assembly bug upstream).
    """
    rho = factors.rho_eff
    gamma1 = derive_gamma1(params)
    k, k1 = conversion_factors(params, rho)
    g_roots = characteristic_roots(params, rho)
    a2 = -params.gamma * g_roots.m_minus
    direct = (
        A2 * c_tilde**a2
        + c_tilde / (params.alpha * k)
        - params.w * params.b_bar / params.r
    )
    try:
        internals = _solve_system(params, rho, rho)
    except (ValueError, NoRetirementBoundary, ClosedFormError):
        return direct  # degenerate configuration: no corner map to check against
    corner = internals.x_corner(c_tilde)
    if abs(direct - corner) > 1e-6 * max(1.0, abs(direct)):
        raise InconsistentBoundary(
            f"x_tilde expressions disagree: interior {direct} vs corner {corner}"
        )
    return direct


def inverse_wealth(
    regime: str,
    params: ModelParameters,
    factors: DerivedFactors,
    coefficients: tuple[float, ...],
    c_hi: float | None = None,
) -> InverseWealthMap:
    """Build the monotonicity-checked wealth map for one regime.

    ``coefficients`` is (A2,) for "interior" or (B1, B2) for "corner".
    The interior map lives on (0, c_tilde]; the corner map on
    [c_tilde, c_hi] (default 10*c_tilde when the solved c* is not
    supplied).
    """
    rho = factors.rho_eff
    s = _static_internals(params, rho, rho)
    ct = s["c_tilde"]
    if regime == "interior":
        (A2,) = coefficients
        return InverseWealthMap(
            regime="interior",
            coefficients=(A2,),
            exponents=(s["a2"],),
            linear_coef=s["E"],
            offset=s["floor"],
            c_lo=0.0,
            c_hi=c_hi if c_hi is not None else ct,
        )
    if regime == "corner":
        B1, B2 = coefficients
        return InverseWealthMap(
            regime="corner",
            coefficients=(B1, B2),
            exponents=(s["b1"], s["b2"]),
            linear_coef=1.0 / s["k1"],
            offset=s["corner_offset"],
            c_lo=ct,
            c_hi=c_hi if c_hi is not None else 10.0 * ct,
        )
    raise ValueError(f"unknown regime {regime!r}; expected 'interior' or 'corner'")


# ---------------------------------------------------------------------------
# Assembly.
# ---------------------------------------------------------------------------


def _build_report(
    params: ModelParameters, factors: DerivedFactors, n: SolutionInternals
) -> tuple[Diagnostic, ...]:
    ct, cs = n.c_tilde, n.c_star
    g_at_star = n.g(n.x_star)
    gp_at_star = n.g_prime(n.x_star)
    vp_int_ct = n.vprime_interior(ct)
    vp_cor_ct = n.vprime_corner(ct)
    printed_b1 = _printed_B1(params, factors, ct)
    printed_b2 = constant_B2(params, factors, n.x_star)
    printed_a2 = _printed_A2(params, factors, ct, printed_b2)
    report = [
        Diagnostic(
            "x_tilde_value_matching",
            abs(n.v_interior(ct) - n.v_corner(ct)),
            "value continuity across the allocation-cap threshold",
        ),
        Diagnostic(
            "x_tilde_wealth_matching",
            abs(n.x_interior(ct) - n.x_corner(ct)),
            "the two wealth-map expressions for x_tilde",
        ),
        Diagnostic(
            "x_tilde_marginal_value_continuity",
            abs(vp_int_ct - vp_cor_ct) / abs(vp_cor_ct),
            "relative gap in V' across x_tilde (an algebraic identity)",
        ),
        Diagnostic(
            "x_tilde_slope_ratio_gap",
            n.dx_corner(ct) / n.dx_interior(ct) - n.gamma1 / n.gamma,
            "dX/dc jump ratio at c_tilde minus gamma1/gamma (zero when V'' matches)",
        ),
        Diagnostic(
            "x_star_value_matching",
            abs(n.v_corner(cs) - g_at_star) / abs(g_at_star),
            "relative value-matching residual at the retirement threshold",
        ),
        Diagnostic(
            "x_star_smooth_pasting",
            abs(n.vprime_corner(cs) - gp_at_star) / abs(gp_at_star),
            "relative smooth-pasting residual at the retirement threshold",
        ),
        Diagnostic(
            "printed_formula_B1_gap",
            printed_b1 - n.B1,
            "direct-formula B1 minus jointly solved B1; the joint system is "
            "authoritative (its residuals above are the ones that vanish)",
        ),
        Diagnostic(
            "printed_formula_B2_gap",
            printed_b2 - n.B2,
            "direct-formula B2 (zero at b_post = b_bar) minus the solved, "
            "substantive coefficient",
        ),
        Diagnostic(
            "printed_formula_A2_gap",
            printed_a2 - n.A2,
            "direct-formula A2 minus jointly solved A2",
        ),
        Diagnostic(
            "printed_threshold_equation_gap",
            _printed_x_star_gap(params, factors, n.B1, n.x_star),
            "normalized residual of the direct-formula x* equation at the "
            "solved (B1, x*); nonzero under the direct convention",
        ),
        Diagnostic(
            "exponent_root_m_plus_gap",
            factors.m_plus - n.mg_plus,
            "positive root of the exposed quadratic (constant term -rho) minus "
            "the characteristic root (constant term -r) the solution uses",
        ),
        Diagnostic(
            "exponent_root_m_minus_gap",
            factors.m_minus - n.mg_minus,
            "negative-root counterpart of the convention gap",
        ),
        Diagnostic(
            "utility_prefactor_convention",
            1.0,
            "positive-base convention for the labor-ratio prefactor "
            "xi^{(1-alpha)(1-gamma)}; the sign-carrying alternative is "
            "non-real for generic exponents",
        ),
    ]
    return tuple(report)


def solve(
    params: ModelParameters,
    mortality: MortalityModel,
    eval_age: float | None = None,
    *,
    g_discount: str = "instantaneous",
) -> ClosedFormSolution:
    """Assemble the full closed-form solution at one evaluation age.

    ``rho_eff`` is the instantaneous effective discount beta + delta at
    ``eval_age`` (default: the mortality model's current age); the
    solve is quasi-static, so age sweeps are families of solutions.
    ``g_discount`` selects the rate in the stopped value G:
    "instantaneous" (default) uses rho_eff; "cumulative" uses the
    accumulated exponent beta*t + H(t), an alternative kept selectable
    for sensitivity analysis (requires eval_age strictly past the
    mortality model's anchor age).
    """
    if eval_age is None:
        eval_age = mortality.current_age
    t = eval_age - mortality.current_age
    if t < 0:
        raise ValueError(
            f"eval_age {eval_age} precedes the mortality anchor age "
            f"{mortality.current_age}"
        )
    rho = params.beta + force_of_mortality(mortality, t)
    if g_discount == "instantaneous":
        rho_g = rho
    elif g_discount == "cumulative":
        rho_g = params.beta * t + cumulative_hazard(mortality, t)
        if rho_g <= 0.0:
            raise ValueError(
                "cumulative discount is 0 at the anchor age; choose a later "
                "eval_age or the instantaneous convention"
            )
    else:
        raise ValueError(f"unknown g_discount {g_discount!r}")
    factors = derive_factors(params, rho)
    n = _solve_system(params, rho, rho_g)
    if not n.floor < n.x_tilde < n.x_star:
        raise InconsistentBoundary(
            f"regime ordering violated: floor {n.floor}, x_tilde {n.x_tilde}, "
            f"x_star {n.x_star}"
        )
    interior_map = InverseWealthMap(
        regime="interior",
        coefficients=(n.A2,),
        exponents=(n.a2,),
        linear_coef=n.E,
        offset=n.floor,
        c_lo=0.0,
        c_hi=n.c_tilde,
    )
    corner_map = InverseWealthMap(
        regime="corner",
        coefficients=(n.B1, n.B2),
        exponents=(n.b1, n.b2),
        linear_coef=1.0 / n.k1,
        offset=n.corner_offset,
        c_lo=n.c_tilde,
        c_hi=n.c_star,
    )
    return ClosedFormSolution(
        eval_age=eval_age,
        rho_eff=rho,
        factors=factors,
        c_tilde=n.c_tilde,
        B1=n.B1,
        B2=n.B2,
        A2=n.A2,
        x_tilde=n.x_tilde,
        x_star=n.x_star,
        solvency_floor=n.floor,
        consistency_report=_build_report(params, factors, n),
        params=params,
        mortality=mortality,
        c_star=n.c_star,
        interior_map=interior_map,
        corner_map=corner_map,
        internals=n,
    )


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------


def g_value(sol: ClosedFormSolution, x: float) -> float:
    """Stopped (annuitized) value G(x) = k^{1-gamma1} x^{1-gamma1} / (rho (1-gamma1))."""
    if x <= 0.0:
        raise BelowSolvency(f"G(x) requires x > 0, got {x}")
    return sol.internals.g(x)


def g_prime(sol: ClosedFormSolution, x: float) -> float:
    """Marginal stopped value G'(x) = k^{1-gamma1} x^{-gamma1} / rho."""
    if x <= 0.0:
        raise BelowSolvency(f"G'(x) requires x > 0, got {x}")
    return sol.internals.g_prime(x)


def consumption_from_wealth(sol: ClosedFormSolution, x: float) -> tuple[float, str]:
    """Consumption level and regime tag at wealth x.

    Retired wealth maps through the first-order condition against G;
    working wealth inverts the regime's wealth map.
    """
    n = sol.internals
    if x <= n.floor:
        raise BelowSolvency(f"x = {x} is at or below the solvency floor {n.floor}")
    if x >= n.x_star:
        return n.retired_c_coef * x, "retired"
    if x >= n.x_tilde:
        return sol.corner_map.invert(x), "corner"
    return sol.interior_map.invert(x), "interior"


def value_function(sol: ClosedFormSolution, x: float) -> float:
    """The value V(x), piecewise across interior/corner/retired regimes.

    Working-regime values are recovered by inverting the wealth map to
    the consumption coordinate and evaluating the pre-differentiation
    identity (linear in the same powers of c as the wealth map), which
    avoids numerical integration of V'.
    """
    c, regime = consumption_from_wealth(sol, x)
    n = sol.internals
    if regime == "retired":
        return n.g(x)
    if regime == "corner":
        return n.v_corner(c)
    return n.v_interior(c)


def value_derivative(sol: ClosedFormSolution, x: float) -> float:
    """Marginal value V'(x): the regime's marginal utility of consumption."""
    c, regime = consumption_from_wealth(sol, x)
    n = sol.internals
    if regime == "retired":
        return n.g_prime(x)
    if regime == "corner":
        return n.vprime_corner(c)
    return n.vprime_interior(c)
