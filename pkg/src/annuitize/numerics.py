"""Shared numerical kernels.

Bracketed scalar root finding (Brent-style hybrid), adaptive Simpson
quadrature, and monotone function inversion.  Every routine is a pure
function of its inputs and carries explicit tolerances, so results are
deterministic and safe to call from any number of threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

__all__ = [
    "Bracket",
    "Tolerance",
    "NumericsError",
    "NoSignChange",
    "MaxIterationsExceeded",
    "OutOfRange",
    "DEFAULT_TOL",
    "find_root",
    "expand_bracket",
    "integrate",
    "invert_monotone",
]

_EPS = math.ulp(1.0)


class NumericsError(Exception):
    """Base class for numerical-kernel failures."""


class NoSignChange(NumericsError):
    """The target function has the same sign at both bracket endpoints."""


class MaxIterationsExceeded(NumericsError):
    """The iteration budget was exhausted before reaching tolerance."""


class OutOfRange(NumericsError):
    """The requested value lies outside the image of the bracket."""


@dataclass(frozen=True)
class Bracket:
    """An interval [lo, hi] that is expected to straddle a root.

    Parameters
    ----------
    lo, hi : float
        Interval endpoints with ``lo < hi``.  Whether the target
        function actually changes sign across the interval is checked
        at call time by the routine consuming the bracket.
    """

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (self.lo < self.hi):
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Tolerance:
    """Stopping-rule parameters shared by the iterative kernels.

    Parameters
    ----------
    abs_tol : float
        Absolute tolerance, must be positive.
    rel_tol : float
        Relative tolerance, must be nonnegative.
    max_iter : int
        Iteration budget, at least 1.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not self.abs_tol > 0:
            raise ValueError(f"abs_tol must be > 0, got {self.abs_tol}")
        if self.rel_tol < 0:
            raise ValueError(f"rel_tol must be >= 0, got {self.rel_tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


#: Default tolerances, far tighter than any acceptance threshold downstream.
DEFAULT_TOL = Tolerance()


def find_root(f: Callable[[float], float], bracket: Bracket, tol: Tolerance = DEFAULT_TOL) -> float:
    """Find a root of ``f`` inside ``bracket``.

    A hybrid bisection / secant / inverse-quadratic scheme: guaranteed
    to converge on a sign-changing bracket, superlinear when the
    function is smooth near the root.

    Parameters
    ----------
    f : callable
        Continuous scalar function on the bracket.
    bracket : Bracket
        Interval with ``f(lo)`` and ``f(hi)`` of opposite sign.
    tol : Tolerance
        Stopping rule: returns ``x`` once ``|f(x)| <= abs_tol`` or the
        enclosing interval width is ``<= rel_tol*|x| + abs_tol``.

    Returns
    -------
    float
        The located root.

    Raises
    ------
    NoSignChange
        If ``f(lo) * f(hi) > 0``.
    MaxIterationsExceeded
        If the budget runs out before the stopping rule is met.
    """
    a, b = bracket.lo, bracket.hi
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa > 0) == (fb > 0):
        raise NoSignChange(
            f"f({a}) = {fa} and f({b}) = {fb} have the same sign"
        )
    c, fc = a, fa
    d = e = b - a
    for _ in range(tol.max_iter):
        if (fb > 0) == (fc > 0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * _EPS * abs(b) + 0.5 * (tol.abs_tol + tol.rel_tol * abs(b))
        xm = 0.5 * (c - b)
        if abs(xm) <= tol1 or fb == 0.0 or abs(fb) <= tol.abs_tol:
            return b
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            # Attempt inverse quadratic interpolation (secant if a == c).
            s = fb / fa
            if a == c:
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                q = fa / fc
                r_ = fb / fc
                p = s * (2.0 * xm * q * (q - r_) - (b - a) * (r_ - 1.0))
                q = (q - 1.0) * (r_ - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            p = abs(p)
            if 2.0 * p < min(3.0 * xm * q - abs(tol1 * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = xm
                e = d
        else:
            d = xm
            e = d
        a, fa = b, fb
        b += d if abs(d) > tol1 else math.copysign(tol1, xm)
        fb = f(b)
    raise MaxIterationsExceeded(
        f"no root to tolerance after {tol.max_iter} iterations; last x = {b}"
    )


def expand_bracket(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    grow: float = 2.0,
    max_expand: int = 60,
) -> Bracket:
    """Geometrically expand ``[lo, hi]`` upward until ``f`` changes sign.

    The lower endpoint is held fixed; the upper endpoint is pushed out
    by the factor ``grow`` each step.  Used to locate a sign-changing
    interval for :func:`find_root` when only a lower starting point is
    known.

    Raises
    ------
    NoSignChange
        If no sign change is found within ``max_expand`` expansions.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi to start, got [{lo}, {hi}]")
    flo = f(lo)
    if flo == 0.0:
        return Bracket(lo, hi)
    width = hi - lo
    for _ in range(max_expand):
        fhi = f(hi)
        if fhi == 0.0 or (flo > 0) != (fhi > 0):
            return Bracket(lo, hi)
        width *= grow
        hi = lo + width
    raise NoSignChange(
        f"no sign change found expanding from lo={lo} up to hi={hi}"
    )


def _simpson(fa: float, fm: float, fb: float, h: float) -> float:
    return h * (fa + 4.0 * fm + fb) / 6.0


def _adaptive(
    f: Callable[[float], float],
    a: float,
    m: float,
    b: float,
    fa: float,
    fm: float,
    fb: float,
    whole: float,
    eps: float,
    depth: int,
    state: dict,
) -> float:
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    state["evals"] += 2
    left = _simpson(fa, flm, fm, m - a)
    right = _simpson(fm, frm, fb, b - m)
    delta = left + right - whole
    # Richardson criterion for composite Simpson: factor 15.
    if abs(delta) <= 15.0 * eps or depth <= 0:
        if depth <= 0 and abs(delta) > 15.0 * eps:
            state["failed"] = True
        return left + right + delta / 15.0
    return _adaptive(f, a, lm, m, fa, flm, fm, left, 0.5 * eps, depth - 1, state) + _adaptive(
        f, m, rm, b, fm, frm, fb, right, 0.5 * eps, depth - 1, state
    )


def integrate(f: Callable[[float], float], a: float, b: float, tol: Tolerance = DEFAULT_TOL) -> float:
    """Adaptive Simpson quadrature of ``f`` over ``[a, b]``.

    Parameters
    ----------
    f : callable
        Piecewise-continuous integrand.
    a, b : float
        Integration limits with ``a <= b``.
    tol : Tolerance
        The estimated error of the result is at most
        ``max(abs_tol, rel_tol * |result|)``; ``max_iter`` bounds the
        recursion depth (capped at 60 levels).

    Raises
    ------
    MaxIterationsExceeded
        If the recursion cap is hit somewhere without meeting the local
        error budget.
    """
    if a > b:
        raise ValueError(f"integrate requires a <= b, got a={a}, b={b}")
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = _simpson(fa, fm, fb, b - a)
    # Two passes: the first resolves the scale so the relative part of
    # the budget has something to bite on.
    est = whole if whole != 0.0 else 1.0
    eps = max(tol.abs_tol, tol.rel_tol * abs(est))
    depth = min(60, max(10, tol.max_iter))
    state = {"evals": 3, "failed": False}
    result = _adaptive(f, a, m, b, fa, fm, fb, whole, eps, depth, state)
    if state["failed"]:
        raise MaxIterationsExceeded(
            f"quadrature on [{a}, {b}] did not converge within recursion depth {depth}"
        )
    return result


def invert_monotone(
    g: Callable[[float], float],
    y: float,
    bracket: Bracket,
    tol: Tolerance = DEFAULT_TOL,
) -> float:
    """Solve ``g(c) = y`` for ``c`` on a strictly monotone bracket.

    Parameters
    ----------
    g : callable
        Strictly monotone (either direction) on the bracket.
    y : float
        Target value; must lie within ``[g(lo), g(hi)]`` up to the
        absolute tolerance.

    Raises
    ------
    OutOfRange
        If ``y`` lies outside the image of the bracket.
    """
    glo, ghi = g(bracket.lo), g(bracket.hi)
    lo_val, hi_val = (glo, ghi) if glo <= ghi else (ghi, glo)
    pad = tol.abs_tol + tol.rel_tol * max(abs(lo_val), abs(hi_val))
    if y < lo_val - pad or y > hi_val + pad:
        raise OutOfRange(
            f"target {y} outside image [{lo_val}, {hi_val}] of bracket"
        )
    # Clamp targets that sit within the pad of an endpoint.
    if y <= lo_val:
        return bracket.lo if glo <= ghi else bracket.hi
    if y >= hi_val:
        return bracket.hi if glo <= ghi else bracket.lo
    return find_root(lambda c: g(c) - y, bracket, tol)
