"""Finite-difference solver for the stationary HJB variational inequality.

Independent numerical arbiter for the closed form: solves

    max{ sup_{c,b,pi} [u1(c,b) + (r x + pi sigma theta + w(b_bar - b) - c) V'
                       + (sigma^2 pi^2 / 2) V''] - rho V,   G(x) - V } = 0

on a uniform wealth grid by policy iteration with an obstacle.  Each
sweep (i) improves the controls node-by-node from first-order
conditions against upwind differences of the current value, then
(ii) takes an implicit pseudo-time step of the resulting linear
tridiagonal system with the obstacle enforced by projection.  The
pseudo-time step grows geometrically, so late sweeps approach pure
policy iteration.  After the value converges, a direct solve of the
stationary linear complementarity problem (controls frozen) drives the
complementarity residual to solver precision.

The scheme is monotone by construction: the first-order term uses the
central difference wherever the local diffusion covers it
(2 * diffusion >= h * |drift|, so both off-diagonal weights stay
nonnegative) and falls back to the one-sided upwind difference
elsewhere; nonnegativity of the off-diagonals is asserted during
assembly.  The central branch matters: the value-obstacle gap vanishes
quadratically at the stopping threshold, so a value error eps displaces
the discrete contact set by ~sqrt(eps) — pure first-order upwinding on
a 2000-point grid misses the threshold by dozens of cells, while the
centrally-differenced scheme (diffusion dominates near the threshold)
localizes it to a cell or two.  The quasi-static convention matches
the closed form: the mortality rate is frozen at the evaluation age.

Boundary treatment: at x_hi the domain is deep in the stopping region
and V = G is imposed.  At x_lo, when the node lies in the
interior-labor band (consumption scale (x_lo - floor) * alpha * k
below the corner threshold), a Dirichlet value from the near-floor
expansion is imposed: as wealth approaches the solvency floor,
consumption scales linearly with the distance to the floor and
V ~ (K_v / rho) * Omega_int * ((x - floor) * alpha * k)^(1-gamma),
which uses only static conversion constants, not the solved boundary
system.  The alternative — a state-constraint row with the drift
forced nonnegative — freezes the node-0 bundle forever and values it
at u/rho, a scale-invariant ~15% error for the baseline curvature that
contaminates the whole left end of the grid; it is kept only as the
fallback when x_lo sits outside the interior-labor band (e.g. grids
that start above the labor corner).
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .market import ModelParameters, conversion_factors, derive_gamma1
from .mortality import MortalityModel, force_of_mortality
from .policy import PolicyPoint

__all__ = [
    "OracleError",
    "NonConvergence",
    "IllPosed",
    "NoContact",
    "Grid",
    "GridSolution",
    "solve_vi",
    "detect_free_boundary",
    "dump_csv",
]

log = logging.getLogger("annuitize.oracle_fd")

PI_CAP_MULTIPLE = 50.0


class OracleError(Exception):
    """Base class for finite-difference solver failures."""


class NonConvergence(OracleError):
    """Sweep limit reached before the value update fell below tolerance."""


class IllPosed(OracleError):
    """Persistent loss of concavity (V'' >= 0) on the continuation region."""


class NoContact(OracleError):
    """The obstacle never binds on the grid (no stopping region found)."""


@dataclass(frozen=True)
class Grid:
    """Uniform wealth grid.

    ``x_lo`` must exceed the solvency floor (checked at solve time,
    when the parameters are known) and ``x_hi`` should sit well past
    the expected stopping threshold — at least twice the estimate —
    or the Dirichlet condition V = G contaminates the solution.
    """

    x_lo: float
    x_hi: float
    n_points: int

    def __post_init__(self) -> None:
        if not self.x_lo < self.x_hi:
            raise ValueError(f"need x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")
        if self.n_points < 200:
            raise ValueError(f"n_points must be >= 200, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n_points - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_points)


@dataclass(frozen=True)
class GridSolution:
    """Converged discrete solution (arrays are frozen read-only views)."""

    grid: Grid
    values: np.ndarray
    obstacle: np.ndarray
    controls: tuple[PolicyPoint, ...]
    free_boundary_index: int
    iterations: int
    final_residual: float


def _obstacle_values(x: np.ndarray, k: float, gamma1: float, rho: float) -> np.ndarray:
    """G(x) = k^{1-gamma1} x^{1-gamma1} / (rho (1-gamma1)); -inf for x <= 0
    (negative wealth cannot be annuitized, so the stopping option is void)."""
    g = np.full_like(x, -np.inf)
    pos = x > 0.0
    g[pos] = k ** (1.0 - gamma1) * x[pos] ** (1.0 - gamma1) / (rho * (1.0 - gamma1))
    return g


def _improve_controls(
    x: np.ndarray,
    v: np.ndarray,
    g: np.ndarray,
    h: float,
    c_prev: np.ndarray,
    b_prev: np.ndarray,
    consts: dict,
    constrain_lo: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One control-improvement pass; returns (c, b, pi, cap_binding_mask).

    Controls are extracted from the central V' estimate (one-sided at
    the ends); selecting the one-sided difference by drift sign here
    makes the controls chatter wherever the drift crosses zero and the
    iteration limit-cycles, so upwinding is applied only in the
    operator assembly, where it is what monotonicity actually needs.
    V'' is central.  Where the central V' estimate is nonpositive
    (pre-convergence transients: a node whose value transiently dips
    below both neighbors), the larger one-sided slope substitutes —
    holding previous controls at such a node is a trap, because the
    frozen controls keep the utility flow depressed and the dip becomes
    self-sustaining.  Only when every slope estimate is nonpositive are
    the previous consumption and allocation held for the sweep.

    pi maximizes the *discrete* Hamiltonian, not the continuous one.
    Where the second difference is negative the two agree: the interior
    argmax -(theta/sigma) V'/V''.  Where the second difference is
    nonnegative (transient dips, boundary-layer cushions at a stalled
    contact edge) the discrete Hamiltonian is convex in pi and its
    argmax is the cap, oriented by the slope term — never 0.  Zeroing
    pi there (the continuous-extraction reflex: no concavity, no
    interior optimum) starves the node of diffusion exactly where
    diffusion is what repairs the profile, and the starved configuration
    is self-consistent: a dip extracts pi = 0, decouples from its
    neighbors, and persists, and a prematurely welded strip whose thin
    cushion reads convex on a one-sided stencil never passes the
    release test.  Policy iteration's global convergence rests on the
    improvement step actually maximizing the discrete Hamiltonian, and
    the cap branch is what that requires here.  At the converged
    solution the continuation region is strictly concave, so the cap
    branch is inert and the fixed point is the one the interior FOC
    defines.  pi is capped at PI_CAP_MULTIPLE * (x - floor) throughout,
    which keeps the control set compact and the implicit system
    diagonally dominant.
    """
    n = x.size
    fwd = np.empty(n)
    fwd[:-1] = (v[1:] - v[:-1]) / h
    fwd[-1] = (v[-1] - v[-2]) / h
    bwd = np.empty(n)
    bwd[1:] = fwd[:-1]
    bwd[0] = fwd[0]
    vp = 0.5 * (fwd + bwd)  # central in the interior, one-sided at the ends
    rescue = (vp <= 0.0) & (np.maximum(fwd, bwd) > 0.0)
    vp = np.where(rescue, np.maximum(fwd, bwd), vp)
    vpp = np.empty(n)
    vpp[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    vpp[0] = vpp[1]
    vpp[-1] = vpp[-2]

    gap = v - g
    tol_gap = 1e-10 * max(1.0, float(np.max(np.abs(v))))

    # At the contact edge, central differences straddle the value-
    # obstacle kink and extract the obstacle's curvature instead of the
    # continuation region's (which is far flatter — the portfolio there
    # is several times the stopped Merton level).  That makes premature
    # contact absorbing: the edge node undervalues continuation with
    # the stunted portfolio and never leaves the obstacle.  The
    # continuum objects at the threshold are the continuation-side
    # limits V'(x*-), V''(x*-), so the first contact node and its left
    # neighbor extract from left-shifted one-sided differences; contact
    # that is genuinely optimal survives this (beyond the threshold
    # every portfolio underperforms the obstacle), premature contact
    # retreats.
    clear = np.nonzero(gap > tol_gap)[0]
    if clear.size and clear[-1] < n - 1:
        j = int(clear[-1]) + 1
        for i in (j - 1, j):
            if 2 <= i < n:
                vp[i] = (v[i] - v[i - 1]) / h
                vpp[i] = (v[i] - 2.0 * v[i - 1] + v[i - 2]) / h**2

    gamma, gamma1 = consts["gamma"], consts["gamma1"]
    ok = vp > 0.0
    vp_safe = np.where(ok, vp, 1.0)
    c_int = (vp_safe / consts["K_v"]) ** (-1.0 / gamma)
    b_int = consts["xi"] * c_int
    corner = b_int > consts["b_post"]
    c = np.where(corner, (vp_safe / consts["K_cor"]) ** (-1.0 / gamma1), c_int)
    b = np.where(corner, consts["b_post"], b_int)
    c = np.where(ok, c, c_prev)
    b = np.where(ok, b, b_prev)
    c_max = 50.0 * consts["k"] * (x - consts["floor"]) + 10.0 * consts["c_tilde"]
    c = np.clip(c, 1e-12, c_max)
    b = np.clip(b, 1e-12, consts["b_post"])

    cap = PI_CAP_MULTIPLE * (x - consts["floor"])
    concave = vpp < 0.0
    pi = np.where(
        concave,
        -(consts["theta"] / consts["sigma"]) * vp / np.where(concave, vpp, -1.0),
        np.where(vp >= 0.0, cap, -cap),  # convex branch: argmax at the cap
    )
    cap_binding = np.abs(pi) > cap
    pi = np.clip(pi, -cap, cap)

    # State-constraint node (fallback x_lo closure only): no diffusion,
    # drift >= 0.  When the FOC controls violate c + w b <= s, split s
    # by the Cobb-Douglas weights (the constrained optimum binds the
    # drift at zero).  Under the Dirichlet closure the node-0 row is
    # inert and its controls are ordinary FOC extractions.
    if constrain_lo:
        w, b_bar = consts["w"], consts["b_bar"]
        pi[0] = 0.0
        s = consts["r"] * x[0] + w * b_bar
        if c[0] + w * b[0] > s:
            b0 = (1.0 - consts["alpha"]) * s / w
            if b0 > consts["b_post"]:
                b0 = consts["b_post"]
                c0 = s - w * b0
            else:
                c0 = consts["alpha"] * s
            c[0] = max(c0, 1e-12)
            b[0] = max(b0, 1e-12)
    return c, b, pi, cap_binding


def _assemble(
    x: np.ndarray,
    c: np.ndarray,
    b: np.ndarray,
    pi: np.ndarray,
    h: float,
    consts: dict,
    constrain_lo: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Monotone operator coefficients (low, up), drift, and utility flow.

    Central differencing of the drift term wherever the diffusion
    covers it (2*diff >= h*|drift| keeps both off-diagonals
    nonnegative), one-sided upwind differencing elsewhere — the
    standard monotone hybrid, locally second-order accurate where the
    central branch is active, which is everywhere that matters here
    since the portfolio term makes diffusion dominate away from the
    floor.
    """
    drift = (
        consts["r"] * x
        + pi * consts["sigma"] * consts["theta"]
        + consts["w"] * (consts["b_bar"] - b)
        - c
    )
    diff = 0.5 * consts["sigma"] ** 2 * pi**2
    central = 2.0 * diff >= h * np.abs(drift)
    low = np.where(
        central,
        diff / h**2 - drift / (2.0 * h),
        diff / h**2 + np.maximum(-drift, 0.0) / h,
    )
    up = np.where(
        central,
        diff / h**2 + drift / (2.0 * h),
        diff / h**2 + np.maximum(drift, 0.0) / h,
    )
    if constrain_lo:
        low[0] = 0.0  # state-constraint row: drift >= 0 by construction
        up[0] = max(drift[0], 0.0) / h
    else:
        low[0] = 0.0  # Dirichlet row at x_lo: coefficients inert
        up[0] = 0.0
    if np.any(low < 0.0) or np.any(up < 0.0):
        raise AssertionError("monotonicity violated: negative off-diagonal weight")
    u = c ** (1.0 - consts["gamma1"]) * b ** (consts["gamma1"] - consts["gamma"]) / (
        1.0 - consts["gamma1"]
    )
    return low, up, drift, u


def _projected_tridiag_solve(
    g: np.ndarray,
    diag: np.ndarray,
    low: np.ndarray,
    up: np.ndarray,
    rhs: np.ndarray,
) -> np.ndarray:
    """Direct solve of the tridiagonal LCP min(A v - rhs, v - g) = 0.

    Forward elimination followed by backward substitution with
    projection onto the obstacle (the Brennan-Schwartz sweep).  Exact
    for an M-matrix when the contact set is an interval attached to the
    far end — precisely the structure here: the stopping region is
    [x*, x_hi] and the obstacle is void (-inf) at nonpositive wealth.
    The far node is Dirichlet, v[-1] = g[-1].  Solving the
    unconstrained system and projecting afterwards is not equivalent:
    it lets contact nodes dip far below G, and the control feedback
    then limit-cycles; iterative projected relaxation is equivalent but
    needs O(n^2) sweeps when diffusion dominates.
    """
    n = diag.size
    dprime = np.empty(n)
    rhsp = np.empty(n)
    dprime[0] = diag[0]
    rhsp[0] = rhs[0]
    for i in range(1, n - 1):
        m = low[i] / dprime[i - 1]
        dprime[i] = diag[i] - m * up[i - 1]
        rhsp[i] = rhs[i] + m * rhsp[i - 1]
    v = np.empty(n)
    v[n - 1] = g[n - 1]
    for i in range(n - 2, -1, -1):
        cand = (rhsp[i] + up[i] * v[i + 1]) / dprime[i]
        v[i] = cand if cand > g[i] else g[i]
    return v


def _implicit_step(
    v: np.ndarray,
    g: np.ndarray,
    low: np.ndarray,
    up: np.ndarray,
    u: np.ndarray,
    rho: float,
    dtau: float,
    v_lo: float | None,
) -> np.ndarray:
    """One implicit pseudo-time step, solved as an exact LCP.

    ``v_lo`` is the Dirichlet value at x_lo, or None for the
    state-constraint closure (node 0 then carries a transport row)."""
    diag = 1.0 / dtau + rho + low + up
    rhs = v / dtau + u
    if v_lo is not None:
        diag[0] = 1.0
        rhs[0] = v_lo
    return _projected_tridiag_solve(g, diag, low, up, rhs)


def _stationary_lcp(
    g: np.ndarray,
    low: np.ndarray,
    up: np.ndarray,
    u: np.ndarray,
    rho: float,
    v_lo: float | None,
) -> np.ndarray:
    """Stationary LCP with frozen controls (no pseudo-time damping):
    establishes componentwise complementarity to solver precision."""
    diag = rho + low + up
    rhs = u.copy()
    if v_lo is not None:
        diag = diag.copy()
        diag[0] = 1.0
        rhs[0] = v_lo
    return _projected_tridiag_solve(g, diag, low, up, rhs)


def _residuals(
    v: np.ndarray,
    g: np.ndarray,
    low: np.ndarray,
    up: np.ndarray,
    u: np.ndarray,
    rho: float,
    v_lo: float | None,
) -> np.ndarray:
    """Stationary HJB residual rho V - L V - u at each non-Dirichlet node.

    The low/up weights encode the stencil for both the central and the
    upwind branches, so the same expression reconstructs L V either
    way."""
    n = v.size
    res = np.zeros(n)
    res[1:-1] = (
        rho * v[1:-1]
        - (low[1:-1] * v[:-2] - (low[1:-1] + up[1:-1]) * v[1:-1] + up[1:-1] * v[2:])
        - u[1:-1]
    )
    if v_lo is None:
        res[0] = rho * v[0] - up[0] * (v[1] - v[0]) - u[0]
    # else: node 0 is exact by construction (Dirichlet), res[0] = 0.
    return res


def solve_vi(
    params: ModelParameters,
    mortality: MortalityModel,
    eval_age: float,
    grid: Grid,
    tol: float = 1e-9,
    max_iter: int = 2000,
) -> GridSolution:
    """Solve the variational inequality on ``grid`` at ``eval_age``.

    Returns the converged GridSolution; the free-boundary index is the
    first node of the terminal contact set (-1 when the obstacle never
    binds — detect_free_boundary turns that into NoContact).

    Raises
    ------
    NonConvergence
        Sweep limit reached, or complementarity could not be
        established after the stationary polish.
    IllPosed
        Concavity loss (V'' >= 0) persisted on a large fraction of the
        continuation region well after burn-in.
    """
    t = eval_age - mortality.current_age
    if t < 0:
        raise ValueError(
            f"eval_age {eval_age} precedes the mortality anchor age "
            f"{mortality.current_age}"
        )
    rho = params.beta + force_of_mortality(mortality, t)
    gamma1 = derive_gamma1(params)
    k, k1 = conversion_factors(params, rho)  # raises if nonpositive
    floor = -params.w * params.b_bar / params.r
    if not grid.x_lo > floor:
        raise ValueError(
            f"grid.x_lo = {grid.x_lo} must exceed the solvency floor {floor}"
        )
    xi = (1.0 - params.alpha) / (params.w * params.alpha)
    power = (1.0 - params.alpha) * (1.0 - params.gamma)
    consts = {
        "r": params.r,
        "w": params.w,
        "alpha": params.alpha,
        "b_bar": params.b_bar,
        "b_post": params.b_post,
        "theta": params.theta,
        "sigma": params.sigma,
        "gamma": params.gamma,
        "gamma1": gamma1,
        "k": k,
        "k1": k1,
        "xi": xi,
        "K_v": xi**power,
        "K_cor": params.b_post**power,
        "c_tilde": params.b_post / xi,
        "floor": floor,
    }
    x = grid.nodes()
    h = grid.spacing
    g = _obstacle_values(x, k, gamma1, rho)

    # x_lo closure: Dirichlet from the near-floor expansion when the
    # node lies inside the interior-labor band (with margin — the
    # expansion drops a power term that only dies well below the corner
    # threshold), else the state-constraint transport row.
    c0 = (grid.x_lo - floor) * params.alpha * k
    omega_int = (
        1.0 / (1.0 - params.gamma)
        - 1.0
        + (params.r + params.theta**2 / (2.0 * params.gamma)) / k
    ) / params.alpha
    v_lo: float | None = None
    if c0 < 0.75 * consts["c_tilde"]:
        cand = consts["K_v"] / rho * omega_int * c0 ** (1.0 - params.gamma)
        if math.isfinite(cand):
            v_lo = cand
            log.info(
                "x_lo closure: Dirichlet from near-floor expansion, "
                "V(%g) = %g",
                grid.x_lo,
                v_lo,
            )
    constrain_lo = v_lo is None

    # Warm start: the stopped value on shifted wealth is concave and
    # increasing.  Under the Dirichlet closure, take the pointwise min
    # with the near-floor expansion extended across the grid: the min
    # of two concave functions is concave (no convex kinks, so the
    # diffusion coupling is alive from the first sweep) and it is
    # continuous at the pinned node — seeding the shifted stopped value
    # alone leaves a huge jump against v_lo at node 0, and the
    # collapse wave it launches can strand the left end on a spurious
    # fixed point of the control feedback (a dipped node with a convex
    # kink extracts pi = 0 and positive drift, decoupling it from the
    # boundary data for good).
    v = _obstacle_values(x - floor, k, gamma1, rho)
    if v_lo is not None:
        expansion = (
            consts["K_v"]
            / rho
            * omega_int
            * ((x - floor) * params.alpha * k) ** (1.0 - params.gamma)
        )
        v = np.minimum(v, expansion)
        v[0] = v_lo
    retired_coef = (rho * k ** (gamma1 - 1.0)) ** (1.0 / gamma1)
    c = np.maximum(retired_coef * (x - floor), 1e-6)
    b = np.clip(xi * c, 1e-12, params.b_post)
    cap_binding = np.zeros(x.size, dtype=bool)

    dtau = 0.5
    scale = max(1.0, float(np.max(np.abs(v))))
    convex_streak = 0
    iterations = 0
    converged = False
    for sweep in range(max_iter):
        iterations = sweep + 1
        c, b, pi, cap_binding = _improve_controls(x, v, g, h, c, b, consts, constrain_lo)
        low, up, drift, u = _assemble(x, c, b, pi, h, consts, constrain_lo)
        v_new = _implicit_step(v, g, low, up, u, rho, dtau, v_lo)
        err = float(np.max(np.abs(v_new - v))) / max(1.0, float(np.max(np.abs(v_new))))
        # Concavity watch on the continuation region after burn-in.
        if sweep >= 40:
            vpp = v_new[2:] - 2.0 * v_new[1:-1] + v_new[:-2]
            cont = v_new[1:-1] > g[1:-1] + 1e-8 * scale
            n_cont = int(np.sum(cont))
            if n_cont > 0 and np.sum(vpp[cont] >= 0.0) > 0.3 * n_cont:
                convex_streak += 1
                if convex_streak >= 12:
                    raise IllPosed(
                        "V'' >= 0 persisted on more than 30% of the continuation "
                        f"region for 12 consecutive sweeps (sweep {sweep + 1})"
                    )
            else:
                convex_streak = 0
        v = v_new
        scale = max(1.0, float(np.max(np.abs(v))))
        if err < tol:
            converged = True
            break
        dtau = min(dtau * 1.6, 1e7)
    if not converged:
        raise NonConvergence(
            f"value update still {err:.3e} (tol {tol}) after {max_iter} sweeps"
        )

    # Final control improvement at the converged value, then a
    # stationary direct-LCP polish for clean complementarity.
    c, b, pi, cap_binding = _improve_controls(x, v, g, h, c, b, consts, constrain_lo)
    low, up, drift, u = _assemble(x, c, b, pi, h, consts, constrain_lo)
    v = _stationary_lcp(g, low, up, u, rho, v_lo)
    res = _residuals(v, g, low, up, u, rho, v_lo)
    gap = v - g
    comp = np.minimum(np.abs(res), np.abs(np.where(np.isfinite(gap), gap, res)))
    comp[-1] = 0.0  # Dirichlet row
    final_residual = float(np.max(comp))
    if final_residual > 1e-6 * scale:
        raise NonConvergence(
            f"complementarity residual {final_residual:.3e} exceeds "
            f"1e-6 * scale after polish (scale {scale:.3e})"
        )
    if np.any(cap_binding[:-1]):
        where = x[np.nonzero(cap_binding[:-1])[0]]
        log.info(
            "pi cap (%gx distance to floor) binding at %d nodes, first x=%g",
            PI_CAP_MULTIPLE,
            where.size,
            where[0],
        )

    contact = np.isfinite(gap) & (gap < 1e-8 * scale)
    fb_index = -1
    for i in range(x.size):
        if contact[i] and bool(np.all(contact[i:])):
            fb_index = i
            break
    if fb_index == x.size - 1:
        # Only the pinned closure node touches the obstacle: the domain
        # is truncated below the true threshold (or the parameters put
        # the threshold beyond x_hi).  There is no free boundary on the
        # grid; detect_free_boundary turns this into NoContact.
        fb_index = -1
    if 0 < fb_index < x.size // 2:
        log.info(
            "contact set starts at x=%g, below the domain midpoint; "
            "x_hi may be unnecessarily large",
            x[fb_index],
        )

    points = []
    for i in range(x.size):
        if fb_index >= 0 and i >= fb_index:
            points.append(
                PolicyPoint(
                    c=retired_coef * x[i],
                    b=0.0,
                    pi=params.theta / (params.sigma * gamma1) * x[i],
                    regime="retired",
                )
            )
        else:
            regime = "corner" if b[i] >= params.b_post * (1.0 - 1e-9) else "interior"
            points.append(PolicyPoint(c=float(c[i]), b=float(b[i]), pi=float(pi[i]), regime=regime))
    values = v.copy()
    values.flags.writeable = False
    obstacle = g.copy()
    obstacle.flags.writeable = False
    return GridSolution(
        grid=grid,
        values=values,
        obstacle=obstacle,
        controls=tuple(points),
        free_boundary_index=fb_index,
        iterations=iterations,
        final_residual=final_residual,
    )


def detect_free_boundary(gs: GridSolution) -> float:
    """Smallest grid wealth where the obstacle binds and stays binding.

    Raises NoContact when the stopping region is empty on the grid —
    either a parameter pathology or a domain truncated below the true
    threshold.
    """
    if gs.free_boundary_index < 0:
        raise NoContact(
            "obstacle never binds on the grid; extend x_hi or check parameters"
        )
    return float(gs.grid.nodes()[gs.free_boundary_index])


def dump_csv(gs: GridSolution, path: str) -> None:
    """Write (x, V, G, c, b, pi) rows for debugging, same schema as the
    curve exports: shortest round-trip decimals, newline-terminated."""
    x = gs.grid.nodes()
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "V", "G", "c", "b", "pi"])
        for i in range(x.size):
            pt = gs.controls[i]
            writer.writerow(
                [
                    repr(float(x[i])),
                    repr(float(gs.values[i])),
                    repr(float(gs.obstacle[i])),
                    repr(pt.c),
                    repr(pt.b),
                    repr(pt.pi),
                ]
            )
    os.replace(tmp, path)
