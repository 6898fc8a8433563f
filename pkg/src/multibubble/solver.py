"""Damped-Newton solution of the regularized problem and concentration checks.

The regularized problem is -Laplace(v) = eps^2 a(x) e^v with zero boundary
data; the singular original variable is reconstructed analytically as
u = v - 4 pi sum_p alpha_p G(x, p) and never discretized.

Two Newton drivers:

* raw: unknowns are the nodal values of v itself.  Requires the grid to
  resolve the concentration cores (h <= eps*mu/8 by default); refuses
  under-resolved runs.
* split: v = v0 + w with v0 the bubble ansatz carried analytically and w a
  smooth correction on the grid.  The bubble Laplacian is known exactly and
  the peaked cells enter through their exact cell averages, so no core
  resolution constraint applies; this is the production path for small eps.

Masses, peak locations and far-field deviations are the observables that
verify the predicted concentration (8 pi per point, Green-function far
field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import geometry
from .bubbles import AnsatzField, build_ansatz, radial_ball_quadrature
from .energy import Configuration, SingularSet, log_weight
from .errors import (
    GridTooCoarse,
    NewtonDiverged,
    OverflowInExp,
    OverlappingBalls,
    TestPointTooClose,
)
from .fdgrid import FDGrid, GridField
from .green import TWO_PI, GreenEngine

EIGHT_PI = 4.0 * TWO_PI
_EXP_CAP = 700.0


@dataclass
class SolveReport:
    epsilon: float
    grid_n: int
    method: str
    converged: bool
    residual_norm: float
    residual_scale: float
    newton_iters: int
    field: object  # evaluable: .value((M,2)) -> values of v
    nodal_values: np.ndarray
    grid: FDGrid
    cells_per_core: float
    total_mass: float = math.nan
    ball_masses: list = field(default_factory=list)  # (center, radius, mass)
    peaks: list = field(default_factory=list)
    farfield_deviation: float = math.nan
    ansatz: AnsatzField | None = None

    def to_json(self):
        def num(x):  # strict JSON has no NaN/Infinity
            return float(x) if math.isfinite(x) else None

        return {
            "epsilon": self.epsilon,
            "grid_n": self.grid_n,
            "method": self.method,
            "converged": self.converged,
            "residual_norm": self.residual_norm,
            "residual_scale": self.residual_scale,
            "newton_iters": self.newton_iters,
            "cells_per_core": num(self.cells_per_core),
            "total_mass": num(self.total_mass),
            "ball_masses": [
                {"center": list(map(float, c)), "radius": float(r), "mass": float(m)}
                for (c, r, m) in self.ball_masses
            ],
            "peaks": [list(map(float, p)) for p in self.peaks],
            "farfield_deviation": num(self.farfield_deviation),
        }


class _SplitField:
    """v = analytic ansatz + interpolated grid correction."""

    def __init__(self, ansatz: AnsatzField, w_field: GridField):
        self.ansatz = ansatz
        self.w_field = w_field

    def value(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.ansatz.value(X) + self.w_field.value_many(X)

    def __call__(self, X):
        return self.value(X)


def _newton_loop(grid, rhs_fn, jac_diag_fn, u0, tol, max_iter, max_halvings):
    """Damped Newton for A u = rhs(u); returns (u, residual, scale, iters, ok).

    rhs_fn(u) and jac_diag_fn(u) give the nonlinear right-hand side and its
    diagonal derivative; the line search halves until the residual decreases.
    """
    A = grid.A
    u = u0.copy()

    def residual(vec):
        with np.errstate(over="ignore", invalid="ignore"):
            r = A @ vec - rhs_fn(vec)
        return r

    r = residual(u)
    rnorm = float(np.abs(r).max())
    iters = 0
    for iters in range(1, max_iter + 1):
        scale = 1.0 + float(np.abs(rhs_fn(u)).max())
        if rnorm < tol * scale:
            return u, rnorm, scale, iters - 1, True
        J = (A - sparse.diags(jac_diag_fn(u))).tocsc()
        try:
            delta = splu(J).solve(-r)
        except RuntimeError as exc:  # singular factorization
            raise NewtonDiverged(f"Jacobian factorization failed: {exc}") from exc
        t = 1.0
        accepted = False
        for _ in range(max_halvings):
            cand = u + t * delta
            rc = residual(cand)
            rc_norm = float(np.abs(rc).max()) if np.all(np.isfinite(rc)) else math.inf
            if rc_norm < rnorm:
                u, r, rnorm = cand, rc, rc_norm
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise NewtonDiverged(
                f"line search failed after {max_halvings} halvings at iter {iters}, "
                f"residual {rnorm:.3e}"
            )
    scale = 1.0 + float(np.abs(rhs_fn(u)).max())
    ok = rnorm < tol * scale
    return u, rnorm, scale, iters, ok


def newton_solve(
    green: GreenEngine,
    Z: SingularSet,
    epsilon: float,
    initial,
    grid_n: int,
    tol: float = 1e-9,
    max_iter: int = 40,
    max_halvings: int = 40,
    resolution_factor: float = 8.0,
    enforce_resolution: bool = True,
) -> SolveReport:
    """Newton iteration on the nodal values of v (cores must be resolved).

    initial is None (zero field), a callable on (M,2) arrays, or an ansatz
    field; when bubble scales are known the grid must satisfy
    h <= eps * min_j mu_j / resolution_factor or GridTooCoarse is raised.
    """
    grid = FDGrid(green.domain, grid_n)
    cells_per_core = math.inf
    if isinstance(initial, AnsatzField):
        s_min = min(b.core_width for b in initial.params)
        cells_per_core = s_min / grid.h
        if enforce_resolution and grid.h > s_min / resolution_factor:
            raise GridTooCoarse(
                f"h={grid.h:.3e} exceeds core/{resolution_factor:g}"
                f"={s_min / resolution_factor:.3e}; refine the grid or use the "
                f"split solver"
            )
    pts = grid.points
    log_a = log_weight(green, Z, pts, strict=False)
    log_eps2 = 2.0 * math.log(epsilon)

    def rhs_fn(v):
        with np.errstate(over="ignore"):
            return np.exp(log_eps2 + log_a + v)

    if initial is None:
        v0 = np.zeros(grid.m)
    elif isinstance(initial, AnsatzField):
        v0 = initial.value(pts)
    else:
        v0 = np.asarray(initial(pts), dtype=float)
    if np.any(log_eps2 + log_a + v0 > _EXP_CAP):
        raise OverflowInExp("initial field already overflows the nonlinearity")

    v, rnorm, scale, iters, ok = _newton_loop(
        grid, rhs_fn, rhs_fn, v0, tol, max_iter, max_halvings
    )
    q = rhs_fn(v)
    report = SolveReport(
        epsilon=epsilon,
        grid_n=grid_n,
        method="raw",
        converged=ok,
        residual_norm=rnorm,
        residual_scale=scale,
        newton_iters=iters,
        field=GridField(grid, v),
        nodal_values=v,
        grid=grid,
        cells_per_core=cells_per_core,
        ansatz=initial if isinstance(initial, AnsatzField) else None,
    )
    report.total_mass = float(q.sum() * grid.h**2)
    report.peaks = _nodal_peaks(grid, q, initial)
    return report


# ---------------------------------------------------------------------------
# split solver


def _cell_averages(ansatz: AnsatzField, grid: FDGrid):
    """Exact-to-quadrature cell averages of the nonlinear density (without
    the e^w factor) and of the bubble Laplacian on node-centered cells.

    Cells far from every core take midpoint values; cells within
    max(10 eps mu, 3h) are integrated with sub-cell Gauss rules sized to the
    local density scale, so the peaked mass is never aliased.
    """
    pts = grid.points
    h = grid.h
    qbar = ansatz.nonlinear_density(pts)
    kbar = ansatz.laplacian_density(pts)

    gx, gw = np.polynomial.legendre.leggauss(4)
    for b in ansatz.params:
        s = b.core_width
        r_fv = max(10.0 * s, 3.0 * h)
        d = pts - b.xi
        core = np.einsum("ij,ij->i", d, d) < r_fv * r_fv
        for i in np.nonzero(core)[0]:
            c = pts[i]
            dist = float(np.hypot(*(c - b.xi)))
            if dist < 4.0 * s:
                m = min(int(math.ceil(6.0 * h / s)), 32)
            else:
                m = 6
            # m x m subcells, 4x4 Gauss each
            edges = np.linspace(-0.5 * h, 0.5 * h, m + 1)
            mids = 0.5 * (edges[:-1] + edges[1:])
            half = 0.5 * (edges[1] - edges[0])
            ox = (mids[:, None] + half * gx[None, :]).ravel()
            X, Y = np.meshgrid(ox, ox, indexing="ij")
            sub = np.stack([c[0] + X.ravel(), c[1] + Y.ravel()], axis=1)
            wts = (gw[None, :] * np.ones((m, 1))).ravel() * half
            W = np.outer(wts, wts).ravel()
            qbar[i] = float(W @ ansatz.nonlinear_density(sub)) / h**2
            kbar[i] = float(W @ ansatz.laplacian_density(sub)) / h**2
    return qbar, kbar


def newton_solve_split(
    green: GreenEngine,
    Z: SingularSet,
    epsilon: float,
    ansatz: AnsatzField,
    grid_n: int,
    tol: float = 1e-9,
    max_iter: int = 40,
    max_halvings: int = 40,
    w_init: np.ndarray | None = None,
) -> SolveReport:
    """Newton iteration on the smooth correction w, v = ansatz + w.

    The equation for w is -Laplace(w) = eps^2 a e^{v0} e^w - K with K the
    exact ansatz Laplacian; the peaked factors enter via cell averages, so
    the correction stays smooth at any grid resolution.
    """
    grid = FDGrid(green.domain, grid_n)
    qbar, kbar = _cell_averages(ansatz, grid)

    def rhs_fn(w):
        with np.errstate(over="ignore"):
            return qbar * np.exp(w) - kbar

    def jac_fn(w):
        with np.errstate(over="ignore"):
            return qbar * np.exp(w)

    w0 = np.zeros(grid.m) if w_init is None else np.asarray(w_init, dtype=float)
    w, rnorm, scale, iters, ok = _newton_loop(
        grid, rhs_fn, jac_fn, w0, tol, max_iter, max_halvings
    )
    w_field = GridField(grid, w)
    s_min = min(b.core_width for b in ansatz.params)
    report = SolveReport(
        epsilon=epsilon,
        grid_n=grid_n,
        method="split",
        converged=ok,
        residual_norm=rnorm,
        residual_scale=scale,
        newton_iters=iters,
        field=_SplitField(ansatz, w_field),
        nodal_values=ansatz.value(grid.points) + w,
        grid=grid,
        cells_per_core=s_min / grid.h,
        ansatz=ansatz,
    )
    report.total_mass = _total_mass_split(green, report)
    report.peaks = _refined_peaks(report)
    return report


def solve_from_ansatz(
    green: GreenEngine,
    Z: SingularSet,
    epsilon: float,
    ansatz: AnsatzField,
    grid_n: int,
    method: str = "auto",
    **kw,
) -> SolveReport:
    """Dispatch between the raw and split drivers.

    "auto" runs raw when the grid resolves the cores at the strict factor and
    split otherwise.
    """
    if method == "auto":
        grid_h = 1.02 * green.domain.diameter / (grid_n - 1)  # bbox margin estimate
        s_min = min(b.core_width for b in ansatz.params)
        method = "raw" if grid_h <= s_min / 8.0 else "split"
    if method == "raw":
        return newton_solve(green, Z, epsilon, ansatz, grid_n, **kw)
    if method == "split":
        return newton_solve_split(green, Z, epsilon, ansatz, grid_n, **kw)
    raise ValueError(f"unknown solver method {method!r}")


# ---------------------------------------------------------------------------
# observables


def _nodal_peaks(grid: FDGrid, q: np.ndarray, ansatz):
    n = grid.n
    Q = np.full((n, n), -np.inf)
    Q[grid.inside] = q
    peaks = []
    interior = np.zeros_like(grid.inside)
    interior[1:-1, 1:-1] = grid.inside[1:-1, 1:-1]
    cand = (
        (Q > np.roll(Q, 1, 0))
        & (Q > np.roll(Q, -1, 0))
        & (Q > np.roll(Q, 1, 1))
        & (Q > np.roll(Q, -1, 1))
        & interior
    )
    ii, jj = np.nonzero(cand)
    vals = Q[ii, jj]
    order = np.argsort(-vals)
    limit = len(ansatz.params) if isinstance(ansatz, AnsatzField) else 8
    for k in order[:limit]:
        peaks.append(np.array([grid.xs[ii[k]], grid.ys[jj[k]]]))
    return peaks


def _refined_peaks(report: SolveReport):
    """Peak locations of the density, refined on fine local patches."""
    ansatz = report.ansatz
    w_field = report.field.w_field
    peaks = []
    for b in ansatz.params:
        s = b.core_width
        span = np.linspace(-4.0 * s, 4.0 * s, 41)
        X, Y = np.meshgrid(b.xi[0] + span, b.xi[1] + span, indexing="ij")
        P = np.stack([X.ravel(), Y.ravel()], axis=1)
        logq = ansatz.log_nonlinear_density(P) + w_field.value_many(P)
        k = int(np.argmax(logq))
        peaks.append(P[k])
    return peaks


def _total_mass_split(green: GreenEngine, report: SolveReport) -> float:
    ansatz = report.ansatz
    w_field = report.field.w_field

    def density(X):
        lv = ansatz.log_nonlinear_density(X) + w_field.value_many(X)
        with np.errstate(over="ignore"):
            return np.exp(lv)

    centers = [b.xi for b in ansatz.params]
    srcs, _ = ansatz.Z.arrays() if len(ansatz.Z) else (np.zeros((0, 2)), None)
    radii = []
    for j, b in enumerate(ansatz.params):
        r = geometry.dist_to_boundary(green.domain, b.xi)
        for k, other in enumerate(ansatz.params):
            if k != j:
                r = min(r, 0.5 * float(np.hypot(*(b.xi - other.xi))))
        for p in srcs:  # keep the weight's kink out of the radial rule
            r = min(r, 0.9 * float(np.hypot(*(b.xi - p))))
        radii.append(0.999 * r)
    total = []
    for c, R, b in zip(centers, radii, ansatz.params):
        pts, wts = radial_ball_quadrature(c, R, b.core_width)
        total.append(float(wts @ density(pts)))
    bg_pts, bg_wts = report.grid.cell_quadrature()
    mask = np.ones(len(bg_pts), dtype=bool)
    for c, R in zip(centers, radii):
        d = bg_pts - np.asarray(c)
        mask &= np.einsum("ij,ij->i", d, d) > R * R
    if mask.any():
        total.append(float(bg_wts[mask] @ density(bg_pts[mask])))
    return math.fsum(total)


def ball_mass(green: GreenEngine, Z: SingularSet, report: SolveReport, center, radius) -> float:
    """eps^2 integral of a e^v over a ball, by the method fitting the solve."""
    center = np.asarray(center, dtype=float)
    if report.method == "split":
        ansatz = report.ansatz
        w_field = report.field.w_field

        def density(X):
            lv = ansatz.log_nonlinear_density(X) + w_field.value_many(X)
            return np.exp(lv)

        core = min(b.core_width for b in ansatz.params)
        pts, wts = radial_ball_quadrature(center, radius, core)
        return float(wts @ density(pts))
    grid = report.grid
    d = grid.points - center
    sel = np.einsum("ij,ij->i", d, d) <= radius * radius
    log_a = log_weight(green, Z, grid.points[sel], strict=False)
    q = np.exp(2.0 * math.log(report.epsilon) + log_a + report.nodal_values[sel])
    return float(q.sum() * grid.h**2)


@dataclass
class ConcentrationSummary:
    centers: list
    radius: float
    ball_masses: list
    complement_mass: float
    total_mass: float
    target: float = EIGHT_PI

    def to_json(self):
        return {
            "centers": [list(map(float, c)) for c in self.centers],
            "radius": self.radius,
            "ball_masses": list(map(float, self.ball_masses)),
            "complement_mass": self.complement_mass,
            "total_mass": self.total_mass,
            "target": self.target,
        }


def concentration_report(
    green: GreenEngine,
    Z: SingularSet,
    report: SolveReport,
    xi_star: Configuration,
    ball_radius: float,
) -> ConcentrationSummary:
    """Per-ball masses around the predicted points, plus the complement."""
    xs = xi_star.xs
    for j in range(len(xs)):
        if geometry.dist_to_boundary(green.domain, xs[j]) <= ball_radius:
            raise OverlappingBalls("a mass ball reaches the boundary")
        for k in range(j + 1, len(xs)):
            if np.hypot(*(xs[j] - xs[k])) <= 2.0 * ball_radius:
                raise OverlappingBalls("mass balls overlap")
    masses = [ball_mass(green, Z, report, x, ball_radius) for x in xs]
    total = report.total_mass
    return ConcentrationSummary(
        centers=[x for x in xs],
        radius=ball_radius,
        ball_masses=masses,
        complement_mass=total - math.fsum(masses),
        total_mass=total,
    )


def farfield_check(
    green: GreenEngine,
    Z: SingularSet,
    report: SolveReport,
    xi_star: Configuration,
    test_points,
    min_separation: float,
) -> float:
    """Max deviation of the solution from the Green far field at test points.

    In the regularized variable the prediction is v = 8 pi sum_j G(x, xi_j);
    the source terms of the original variable cancel identically in this
    form.
    """
    P, _ = Z.arrays() if len(Z) else (np.zeros((0, 2)), None)
    pts = np.atleast_2d(np.asarray(test_points, dtype=float))
    if pts.size == 0:
        raise ValueError("no far-field test points satisfy the separation rule")
    for t in pts:
        for x in xi_star.xs:
            if np.hypot(*(t - x)) < min_separation:
                raise TestPointTooClose(f"test point {tuple(t)} is too close to a peak")
        for p in P:
            if np.hypot(*(t - p)) < min_separation:
                raise TestPointTooClose(f"test point {tuple(t)} is too close to a source")
    v_vals = report.field.value(pts)
    pred = np.zeros(len(pts))
    for x in xi_star.xs:
        pred += EIGHT_PI * green.green_many(pts, x)
    return float(np.abs(v_vals - pred).max())


def default_test_points(green: GreenEngine, Z: SingularSet, xi_star: Configuration, min_separation: float, count: int = 16):
    """Deterministic far-field sample points satisfying the separation rule."""
    dom = green.domain
    P, _ = Z.arrays() if len(Z) else (np.zeros((0, 2)), None)
    out = []
    for frac in (0.55, 0.7, 0.85):
        for k in range(64):
            th = 2.0 * math.pi * k / 64
            r = frac * float(dom.radius_fn(th))
            t = np.array([r * math.cos(th), r * math.sin(th)])
            ok = all(np.hypot(*(t - x)) >= min_separation for x in xi_star.xs)
            ok = ok and all(np.hypot(*(t - p)) >= min_separation for p in P)
            ok = ok and geometry.dist_to_boundary(dom, t) > 0.05 * dom.diameter
            if ok:
                out.append(t)
            if len(out) >= count:
                return out
    return out


# ---------------------------------------------------------------------------
# continuation


def continuation(
    green: GreenEngine,
    Z: SingularSet,
    xi_star: Configuration,
    epsilon_list,
    grid_n: int,
    method: str = "split",
    ball_radius: float | None = None,
    tol: float = 1e-9,
    recenter_tol: float | None = None,
) -> list[SolveReport]:
    """Solve along a decreasing eps ladder, re-centering bubbles at peaks.

    Each solution seeds the next step; steps may shrink eps by at most a
    factor of two.  Reports carry masses around the predicted points and the
    far-field deviation.
    """
    eps = [float(e) for e in epsilon_list]
    if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
        raise ValueError("epsilon_list must be strictly decreasing")
    if any(e2 < 0.5 * e1 - 1e-15 for e1, e2 in zip(eps, eps[1:])):
        raise ValueError("epsilon may shrink by at most a factor of two per step")
    if ball_radius is None:
        ball_radius = _default_ball_radius(green, Z, xi_star)
    if recenter_tol is None:
        recenter_tol = 1e-4 * green.domain.diameter

    centers = Configuration(xi_star.xs.copy())
    reports = []
    w_prev = None
    raw_prev = None
    for e in eps:
        ansatz = build_ansatz(green, Z, centers, e, mode="exact")
        if method == "split":
            rep = newton_solve_split(
                green, Z, e, ansatz, grid_n, tol=tol, w_init=w_prev
            )
            w_prev = rep.field.w_field.values.copy()
        else:
            initial = ansatz if raw_prev is None else _warm_raw(ansatz, raw_prev)
            rep = newton_solve(green, Z, e, initial, grid_n, tol=tol)
            raw_prev = rep
        summary = concentration_report(green, Z, rep, xi_star, ball_radius)
        rep.ball_masses = [
            (c, ball_radius, m) for c, m in zip(summary.centers, summary.ball_masses)
        ]
        tp = default_test_points(green, Z, xi_star, 3.0 * ball_radius)
        rep.farfield_deviation = farfield_check(
            green, Z, rep, xi_star, tp, 3.0 * ball_radius
        )
        reports.append(rep)
        # re-center at the observed peaks for the next step (no-op when static)
        if rep.peaks and len(rep.peaks) == centers.n:
            moved = np.array(sorted(map(tuple, rep.peaks)))
            if np.abs(moved - np.array(sorted(map(tuple, centers.xs)))).max() > recenter_tol:
                centers = Configuration(moved)
    return reports


def _default_ball_radius(green, Z, xi_star) -> float:
    r = xi_star.min_boundary_distance(green.domain)
    if xi_star.n > 1:
        r = min(r, 0.5 * xi_star.min_pair_distance())
    if len(Z):
        r = min(r, xi_star.min_source_distance(Z))
    # leave room for far-field test points at 3 radii from the peaks
    return min(0.45 * r, 0.12 * green.domain.diameter)


def _warm_raw(ansatz: AnsatzField, prev: SolveReport):
    """Warm start for the raw driver: new ansatz plus the previous smooth gap."""

    def initial(pts):
        gap = prev.nodal_values - prev.ansatz.value(pts) if prev.ansatz is not None else 0.0
        return ansatz.value(pts) + gap

    return initial


# ---------------------------------------------------------------------------
# independent residual certificate


def _solved_unknowns_and_rhs(green, Z, report):
    """The discrete unknown vector and the nonlinear RHS it must balance."""
    grid = report.grid
    pts = grid.points
    if report.method == "split":
        ansatz = report.ansatz
        w = report.field.w_field.values
        qbar, kbar = _cell_averages(ansatz, grid)
        return w, qbar * np.exp(w) - kbar
    log_a = log_weight(green, Z, pts, strict=False)
    v = report.nodal_values
    return v, np.exp(2.0 * math.log(report.epsilon) + log_a + v)


def residual_certificate(green: GreenEngine, Z: SingularSet, report: SolveReport) -> float:
    """Scaled residual under an independently coded discrete Laplacian.

    Recomputes the shortened-leg stencil directly from the boundary geometry
    (never touching the solver's assembled operator) and applies it to the
    solved unknowns; certifies the assembly and the linear algebra.
    """
    grid = report.grid
    u, rhs = _solved_unknowns_and_rhs(green, Z, report)
    n, h = grid.n, grid.h
    U = np.zeros((n, n))
    U[grid.inside] = u
    idx_ii, idx_jj = np.nonzero(grid.inside)
    res_max = 0.0
    dirs = ((1, 0), (-1, 0), (0, 1), (0, -1))
    for i, j, row in zip(idx_ii, idx_jj, range(grid.m)):
        x = np.array([grid.xs[i], grid.ys[j]])
        legs = np.empty(4)
        vals = np.empty(4)
        for d, (di, dj) in enumerate(dirs):
            ni, nj = i + di, j + dj
            if grid.inside[ni, nj]:
                legs[d] = 1.0
                vals[d] = U[ni, nj]
            else:
                e = np.array([float(di), float(dj)])
                s = geometry.boundary_crossing(grid.domain, x, e, h)
                legs[d] = max(s / h, 1e-6)
                vals[d] = 0.0  # homogeneous data for both v and w
        tE, tW, tN, tS = legs
        lap = (
            2.0 * (vals[0] / (tE * (tE + tW)) + vals[1] / (tW * (tE + tW))) / h**2
            + 2.0 * (vals[2] / (tN * (tN + tS)) + vals[3] / (tS * (tN + tS))) / h**2
            - (2.0 / (tE * tW) + 2.0 / (tN * tS)) / h**2 * U[i, j]
        )
        res_max = max(res_max, abs(-lap - rhs[row]))
    return res_max / report.residual_scale


def truncation_probe(green: GreenEngine, Z: SingularSet, report: SolveReport) -> float:
    """Scaled defect under a higher-order (compact 9-point) Laplacian.

    Measures discretization error rather than algebra; evaluated away from
    the boundary and from under-resolved bubble cores.
    """
    grid = report.grid
    u, rhs = _solved_unknowns_and_rhs(green, Z, report)
    n = grid.n
    U = np.zeros((n, n))
    U[grid.inside] = u
    ok = np.zeros((n, n), dtype=bool)
    ok[1:-1, 1:-1] = True
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ok[1:-1, 1:-1] &= grid.inside[1 + di : n - 1 + di, 1 + dj : n - 1 + dj]
    lap9 = (
        4.0 * (np.roll(U, 1, 0) + np.roll(U, -1, 0) + np.roll(U, 1, 1) + np.roll(U, -1, 1))
        + (
            np.roll(np.roll(U, 1, 0), 1, 1)
            + np.roll(np.roll(U, 1, 0), -1, 1)
            + np.roll(np.roll(U, -1, 0), 1, 1)
            + np.roll(np.roll(U, -1, 0), -1, 1)
        )
        - 20.0 * U
    ) / (6.0 * grid.h**2)
    mask_nodes = ok[grid.inside]
    if report.ansatz is not None:
        pts = grid.points
        for b in report.ansatz.params:
            d = pts - b.xi
            mask_nodes &= np.einsum("ij,ij->i", d, d) > (16.0 * b.core_width) ** 2
    res = np.abs(-lap9[grid.inside][mask_nodes] - rhs[mask_nodes])
    return float(res.max()) / report.residual_scale
