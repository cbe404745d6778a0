"""Mortality law, survival, and actuarially fair annuity pricing.

Implements the Gompertz force of mortality

    delta_t = (1/lambda) * exp((n0 + t - m) / lambda)

with modal age ``m``, dispersion ``lambda`` and current age ``n0``, its
analytic cumulative hazard and survival probability, the effective
discount quantities (subjective rate plus mortality), and the
actuarially fair annuity payout rate.  A constant-hazard mode
(``delta_t`` identically equal to a constant) is provided alongside
Gompertz so the exponential-lifetime special case and its reductions
are first-class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .numerics import Bracket, Tolerance, expand_bracket, find_root, integrate

__all__ = [
    "MortalityModel",
    "DiscountSpec",
    "EffectiveDiscount",
    "MortalityError",
    "TruncationFailure",
    "force_of_mortality",
    "cumulative_hazard",
    "survival_probability",
    "effective_discount",
    "annuity_factor",
    "fair_annuity_rate",
]

#: Survival-probability threshold below which the annuity integral is cut.
SURVIVAL_CUTOFF = 1e-12

_LOG_CUTOFF = -math.log(SURVIVAL_CUTOFF)  # ~27.63


class MortalityError(Exception):
    """Base class for mortality-module failures."""


class TruncationFailure(MortalityError):
    """No usable truncation horizon for the annuity integral was found."""


@dataclass(frozen=True)
class MortalityModel:
    """Deterministic mortality law for an agent of a given age.

    Two modes share the type: the Gompertz law (default) parameterized
    by ``modal_age`` and ``dispersion``, and a constant-hazard mode
    where the force of mortality is ``constant_delta`` at every age.

    Parameters
    ----------
    modal_age : float or None
        Modal value of life m, in years (Gompertz mode only).
    dispersion : float or None
        Dispersion coefficient lambda, in years (Gompertz mode only).
    current_age : float
        Agent's age n0 today, in years; all horizons t are measured
        from this age.
    constant_delta : float or None
        If supplied, switches to constant-hazard mode with this force
        of mortality; ``modal_age`` and ``dispersion`` must then be
        omitted.
    """

    modal_age: float | None
    dispersion: float | None
    current_age: float
    constant_delta: float | None = None

    def __post_init__(self) -> None:
        if self.current_age < 0:
            raise ValueError(f"current_age must be >= 0, got {self.current_age}")
        if self.constant_delta is None:
            if self.modal_age is None or self.dispersion is None:
                raise ValueError(
                    "Gompertz mode requires both modal_age and dispersion"
                )
            if self.modal_age <= 0:
                raise ValueError(f"modal_age must be > 0, got {self.modal_age}")
            if self.dispersion <= 0:
                raise ValueError(f"dispersion must be > 0, got {self.dispersion}")
        else:
            if self.modal_age is not None or self.dispersion is not None:
                raise ValueError(
                    "constant-hazard mode takes no modal_age/dispersion"
                )
            if self.constant_delta < 0:
                raise ValueError(
                    f"constant_delta must be >= 0, got {self.constant_delta}"
                )

    @classmethod
    def gompertz(cls, modal_age: float, dispersion: float, current_age: float) -> "MortalityModel":
        """Gompertz law with modal age m and dispersion lambda."""
        return cls(modal_age=modal_age, dispersion=dispersion, current_age=current_age)

    @classmethod
    def constant(cls, delta: float, current_age: float = 0.0) -> "MortalityModel":
        """Constant force of mortality (exponential lifetime)."""
        return cls(
            modal_age=None,
            dispersion=None,
            current_age=current_age,
            constant_delta=delta,
        )

    @property
    def is_constant(self) -> bool:
        return self.constant_delta is not None

    def at_age(self, age: float) -> "MortalityModel":
        """The same law re-anchored so that horizons start at ``age``."""
        if self.is_constant:
            return MortalityModel.constant(self.constant_delta, current_age=age)
        return MortalityModel.gompertz(self.modal_age, self.dispersion, age)


@dataclass(frozen=True)
class DiscountSpec:
    """Subjective discounting paired with a mortality law.

    Parameters
    ----------
    beta : float
        Subjective discount rate per year, strictly positive.
    mortality : MortalityModel
        Mortality law supplying the hazard component of the discount.
    """

    beta: float
    mortality: MortalityModel

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


class EffectiveDiscount(NamedTuple):
    """Instantaneous rate beta + delta_t and cumulative exponent beta*t + H(t)."""

    instantaneous: float
    cumulative: float


def force_of_mortality(model: MortalityModel, t: float) -> float:
    """Hazard rate delta at horizon ``t`` years past the current age.

    Gompertz mode: ``(1/lambda) * exp((n0 + t - m)/lambda)``, strictly
    positive and strictly increasing in ``t``.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if model.is_constant:
        return model.constant_delta
    lam = model.dispersion
    return math.exp((model.current_age + t - model.modal_age) / lam) / lam


def cumulative_hazard(model: MortalityModel, t: float) -> float:
    """Integrated hazard H(t) = integral of delta over [0, t].

    Gompertz mode evaluates the analytic antiderivative
    ``exp((n0 - m)/lambda) * (exp(t/lambda) - 1)`` (via expm1 so small
    horizons keep full precision); constant mode returns ``delta * t``.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if model.is_constant:
        return model.constant_delta * t
    lam = model.dispersion
    return math.exp((model.current_age - model.modal_age) / lam) * math.expm1(t / lam)


def survival_probability(model: MortalityModel, t: float) -> float:
    """Probability of surviving ``t`` more years: exp(-H(t))."""
    return math.exp(-cumulative_hazard(model, t))


def effective_discount(spec: DiscountSpec, t: float) -> EffectiveDiscount:
    """Effective discount at horizon ``t``: subjective rate plus mortality.

    Returns the pair (instantaneous, cumulative) where

    - instantaneous = beta + delta_t, the rate entering the
      quasi-static conversion factors, and
    - cumulative = beta*t + H(t), the exponent discounting a payoff
      ``t`` years ahead.
    """
    return EffectiveDiscount(
        instantaneous=spec.beta + force_of_mortality(spec.mortality, t),
        cumulative=spec.beta * t + cumulative_hazard(spec.mortality, t),
    )


def _truncation_horizon(spec: DiscountSpec) -> float:
    """Horizon beyond which the annuity integrand is below 1e-12.

    Primary criterion: survival itself below the cutoff (closed form in
    both modes).  When survival decays too slowly (tiny constant
    hazard), fall back to the full discounted weight
    exp(-(beta*t + H(t))) dropping below the cutoff, which always
    happens since beta > 0.  The truncated tail is bounded by
    cutoff / beta, i.e. negligible at 1e-12.
    """
    model = spec.mortality
    if model.is_constant:
        delta = model.constant_delta
        t_surv = _LOG_CUTOFF / delta if delta > 0 else math.inf
    else:
        lam = model.dispersion
        t_surv = lam * math.log1p(
            _LOG_CUTOFF * math.exp((model.modal_age - model.current_age) / lam)
        )
    scan_cap = max(200.0, 50.0 / spec.beta)

    def weight_gap(t: float) -> float:
        return effective_discount(spec, t).cumulative - _LOG_CUTOFF

    try:
        bracket = expand_bracket(weight_gap, 0.0, min(100.0, scan_cap))
        t_weight = find_root(weight_gap, bracket, Tolerance(abs_tol=1e-9, rel_tol=1e-9))
    except Exception:
        t_weight = math.inf
    horizon = min(t_surv, t_weight)
    if not math.isfinite(horizon) or horizon > scan_cap:
        raise TruncationFailure(
            "annuity integrand does not decay below "
            f"{SURVIVAL_CUTOFF} within {scan_cap:.0f} years"
        )
    return horizon


def annuity_factor(spec: DiscountSpec, tol: Tolerance | None = None) -> float:
    """Actuarial present value of a life annuity paying 1 per year.

    Computes ``integral of exp(-beta*s) * survival(s) ds`` from 0 to a
    truncation horizon where the integrand falls below 1e-12.
    """
    horizon = _truncation_horizon(spec)

    def integrand(s: float) -> float:
        return math.exp(-effective_discount(spec, s).cumulative)

    quad_tol = tol if tol is not None else Tolerance(abs_tol=1e-13, rel_tol=1e-12, max_iter=200)
    return integrate(integrand, 0.0, horizon, quad_tol)


def fair_annuity_rate(spec: DiscountSpec, *, age_numerator: bool = False) -> float:
    """Actuarially fair annuity payout rate per unit premium.

    The rate is ``1 / a`` where ``a`` is :func:`annuity_factor` — the
    payout stream whose actuarial present value matches the premium.
    With ``age_numerator=True`` the numerator is the current age
    instead of 1 (an alternative normalization kept selectable for
    comparison; it is not a per-unit-premium rate).
    """
    a = annuity_factor(spec)
    numerator = spec.mortality.current_age if age_numerator else 1.0
    return numerator / a
