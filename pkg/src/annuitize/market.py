"""Market/preference parameters and the algebraic derived quantities.

Holds the validated parameter set (risk-free rate, volatility, price of
risk, subjective discount, risk aversion, consumption weight, wage,
labor capacity), the curvature transform

    gamma1 = 1 - alpha * (1 - gamma),

the conversion factors

    k  = r + (rho - r)/gamma  + ((gamma - 1) /(2 gamma^2))  theta^2
    k1 = r + (rho - r)/gamma1 + ((gamma1 - 1)/(2 gamma1^2)) theta^2,

and two quadratics in the exponent variable m:

    f(m) = (theta^2/2) m^2 + (rho - r + theta^2/2) m - rho
    g(m) = (theta^2/2) m^2 + (rho - r + theta^2/2) m - r

``quadratic_roots`` solves f (whose roots satisfy m_plus > 0 with
m_minus < -1 for typical but not all parameters — violations are
warned, not asserted); ``characteristic_roots`` solves g, whose roots
are the characteristic exponents of the inverse-wealth ODE
(g(-1) = -r < 0 guarantees m_minus < -1 < 0 < m_plus unconditionally).
Here rho is the instantaneous effective discount rate beta + delta_t
frozen at the evaluation age (the closed form is quasi-static; age
enters through the hazard).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

__all__ = [
    "ModelParameters",
    "DerivedFactors",
    "MarketError",
    "NonPositiveConversionFactor",
    "DegenerateDiffusion",
    "DegenerateGamma1",
    "derive_gamma1",
    "conversion_factors",
    "quadratic_roots",
    "characteristic_roots",
    "derive_factors",
]


class MarketError(Exception):
    """Base class for parameter/derivation failures."""


class NonPositiveConversionFactor(MarketError):
    """A conversion factor k or k1 came out non-positive."""


class DegenerateDiffusion(MarketError):
    """theta = 0 collapses the exponent quadratic to a linear equation."""


class DegenerateGamma1(MarketError):
    """gamma1 = 1 - alpha(1-gamma) is too close to 0 or 1 for the exponents."""


@dataclass(frozen=True)
class ModelParameters:
    """Market and preference parameters.

    Parameters
    ----------
    r : float
        Risk-free rate per year.
    sigma : float
        Risky-asset volatility, > 0.
    theta : float
        Market price of risk (mu - r)/sigma.
    mu : float or None
        Risky drift; derived as ``r + sigma*theta`` when omitted, and
        checked against theta when supplied.
    beta : float
        Subjective discount rate per year, > 0.
    gamma : float
        Relative risk aversion, > 0 and != 1.
    alpha : float
        Consumption weight in the Cobb-Douglas utility, in (0, 1).
    w : float
        Wage per unit of labor time per year.
    b_bar : float
        Time endowment available for the utility-bearing allocation
        while working, > 0.
    L, L_bar : float
        Leisure bounds, informational only: 0 <= L < L_bar.
    b_post : float or None
        Allocation cap in the capped (corner) working regime; defaults
        to b_bar, must lie in (0, b_bar].
    """

    r: float = 0.02
    sigma: float = 0.20
    theta: float = 0.07
    mu: float | None = None
    beta: float = 0.03
    gamma: float = 2.0
    alpha: float = 0.2
    w: float = 10.0
    b_bar: float = 1.0
    L: float = 0.0
    L_bar: float = 1.0
    b_post: float | None = None

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.gamma == 1.0:
            raise ValueError("gamma must differ from 1 (log utility not covered)")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.b_bar > 0:
            raise ValueError(f"b_bar must be > 0, got {self.b_bar}")
        if not 0 <= self.L < self.L_bar:
            raise ValueError(
                f"leisure bounds require 0 <= L < L_bar, got L={self.L}, L_bar={self.L_bar}"
            )
        if self.mu is None:
            object.__setattr__(self, "mu", self.r + self.sigma * self.theta)
        else:
            implied = (self.mu - self.r) / self.sigma
            if abs(implied - self.theta) > 1e-12 * max(1.0, abs(self.theta)):
                raise ValueError(
                    f"theta = (mu - r)/sigma violated: theta={self.theta}, "
                    f"(mu - r)/sigma={implied}"
                )
        if self.b_post is None:
            object.__setattr__(self, "b_post", self.b_bar)
        if not 0 < self.b_post <= self.b_bar:
            raise ValueError(
                f"b_post must be in (0, b_bar], got b_post={self.b_post}, b_bar={self.b_bar}"
            )


class ConversionFactors(NamedTuple):
    k: float
    k1: float


class QuadraticRoots(NamedTuple):
    m_plus: float
    m_minus: float


@dataclass(frozen=True)
class DerivedFactors:
    """Algebraic skeleton of the closed form at one evaluation age.

    ``m_plus``/``m_minus`` are the roots of f(m) (constant term -rho);
    ``rho_eff`` is the instantaneous effective discount rate beta +
    delta_t at the evaluation age.
    """

    gamma1: float
    k: float
    k1: float
    m_plus: float
    m_minus: float
    rho_eff: float


def derive_gamma1(params: ModelParameters) -> float:
    """Curvature parameter gamma1 = 1 - alpha(1 - gamma).

    Raises
    ------
    DegenerateGamma1
        If gamma1 lands on 0 or 1 (exponents 1/(1-gamma1), 1/gamma1
        degenerate).  Unreachable for valid params (gamma > 0, != 1)
        but guarded for direct calls.
    """
    gamma1 = 1.0 - params.alpha * (1.0 - params.gamma)
    if abs(gamma1) < 1e-12:
        raise DegenerateGamma1(f"gamma1 = {gamma1} is degenerate (zero)")
    if abs(gamma1 - 1.0) < 1e-12:
        raise DegenerateGamma1(f"gamma1 = {gamma1} is degenerate (one)")
    return gamma1


def _conversion_factor(r: float, rho: float, curvature: float, theta: float) -> float:
    return r + (rho - r) / curvature + ((curvature - 1.0) / (2.0 * curvature**2)) * theta**2


def conversion_factors(params: ModelParameters, rho_eff: float) -> ConversionFactors:
    """Conversion factors (k, k1) at effective discount rate ``rho_eff``.

    k = r + (rho - r)/gamma + ((gamma-1)/(2 gamma^2)) theta^2 and the
    same expression with gamma replaced by gamma1.

    Raises
    ------
    NonPositiveConversionFactor
        If either factor is <= 0 (well-posedness requires both > 0).
    """
    gamma1 = derive_gamma1(params)
    k = _conversion_factor(params.r, rho_eff, params.gamma, params.theta)
    k1 = _conversion_factor(params.r, rho_eff, gamma1, params.theta)
    if k <= 0:
        raise NonPositiveConversionFactor(f"k = {k} <= 0")
    if k1 <= 0:
        raise NonPositiveConversionFactor(f"k1 = {k1} <= 0")
    return ConversionFactors(k=k, k1=k1)


def _solve_quadratic(theta: float, rho_eff: float, r: float, constant: float) -> QuadraticRoots:
    """Roots of (theta^2/2) m^2 + (rho - r + theta^2/2) m + constant.

    Stable form: with constant < 0 the discriminant exceeds the linear
    coefficient squared, so the roots straddle zero and neither suffers
    cancellation when computed via the q-trick.
    """
    if theta == 0:
        raise DegenerateDiffusion(
            "theta = 0: exponent quadratic degenerates to a linear equation"
        )
    a = 0.5 * theta**2
    b = rho_eff - r + a
    c = constant
    disc = b * b - 4.0 * a * c
    sqrt_disc = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sqrt_disc, b)) if b != 0 else 0.5 * sqrt_disc
    root1 = q / a
    root2 = c / q
    return QuadraticRoots(m_plus=max(root1, root2), m_minus=min(root1, root2))


def quadratic_roots(params: ModelParameters, rho_eff: float) -> QuadraticRoots:
    """Roots (m_plus, m_minus) of f(m) = (theta^2/2)m^2 + (rho-r+theta^2/2)m - rho.

    f(0) = -rho < 0 forces one positive and one negative root.  The
    claim m_minus < -1 is not unconditional: f(-1) = r - 2 rho, so
    whenever rho_eff < r/2 the negative root lands in [-1, 0).  Such
    draws are reported with a warning rather than rejected.

    Raises
    ------
    DegenerateDiffusion
        If theta = 0.
    """
    roots = _solve_quadratic(params.theta, rho_eff, params.r, -rho_eff)
    if roots.m_minus >= -1.0:
        warnings.warn(
            f"m_minus = {roots.m_minus} is not below -1 "
            f"(rho_eff={rho_eff}, r={params.r}: f(-1) = {params.r - 2 * rho_eff} >= 0)",
            stacklevel=2,
        )
    return roots


def characteristic_roots(params: ModelParameters, rho_eff: float) -> QuadraticRoots:
    """Roots of g(m) = (theta^2/2)m^2 + (rho-r+theta^2/2)m - r.

    These are the characteristic exponents of the inverse-wealth ODE:
    a power c^m solves the homogeneous part of x = X(c) exactly when
    g(m) = 0.  Since g(-1) = -r < 0, the negative root is below -1
    unconditionally, which is what makes the particular solutions
    (linear consumption term, constant income floor) sit between the
    two homogeneous behaviors.

    Raises
    ------
    DegenerateDiffusion
        If theta = 0.
    """
    return _solve_quadratic(params.theta, rho_eff, params.r, -params.r)


def derive_factors(params: ModelParameters, rho_eff: float) -> DerivedFactors:
    """Assemble the DerivedFactors bundle at ``rho_eff``."""
    roots = quadratic_roots(params, rho_eff)
    k, k1 = conversion_factors(params, rho_eff)
    return DerivedFactors(
        gamma1=derive_gamma1(params),
        k=k,
        k1=k1,
        m_plus=roots.m_plus,
        m_minus=roots.m_minus,
        rho_eff=rho_eff,
    )
