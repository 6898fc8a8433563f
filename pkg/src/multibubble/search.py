"""Admissibility of (N, weights) data and critical-point search.

The pipeline mirrors the variational construction: split the N points over
the sources (each source p takes fewer than 1 + alpha_p points, and no weight
may equal one of the integers 1..N-1), place the points on small annuli
around their sources, minimize the energy over that annulus class with a
pair-separation floor, then refine to a genuine critical point by damped
Newton on the gradient and classify it through the finite-difference Hessian
signature.  A collision scan along shrinking regular polygons around a source
quantifies the balanced/unbalanced blow-up rates that decide compactness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon

from . import geometry
from .energy import (
    Configuration,
    SingularSet,
    energy_report,
    ensure_admissible,
    grad_psi,
    psi,
)
from .errors import (
    EscapedDomain,
    IntegerWeightObstruction,
    InvalidConfiguration,
    NoSplitting,
)
from .green import TWO_PI, GreenEngine

FOUR_PI = 2.0 * TWO_PI


# ---------------------------------------------------------------------------
# splitting plans


@dataclass
class SplittingPlan:
    """How the N points distribute over the sources, plus cone geometry."""

    counts: dict  # source index -> N_p (may be 0)
    angles: dict  # source index -> cone axis angle
    delta: float  # common angular half-width and annulus length scale
    total: int

    def blocks(self):
        """Consecutive global index blocks I_r per source, in source order."""
        out = {}
        start = 0
        for idx in sorted(self.counts):
            c = self.counts[idx]
            out[idx] = list(range(start, start + c))
            start += c
        return out

    def to_json(self):
        return {
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "angles": {str(k): self.angles[k] for k in sorted(self.angles)},
            "delta": self.delta,
            "total": self.total,
        }


def _max_points_for_weight(alpha: float) -> int:
    """Largest integer n with n < 1 + alpha."""
    n = int(math.floor(alpha + 1.0))
    if n >= alpha + 1.0:  # alpha integral: floor hit the excluded endpoint
        n -= 1
    return max(n, 0)


def _integer_weight_conflict(alpha: float, n_points: int, tol: float = 1e-9):
    k = round(alpha)
    return abs(alpha - k) < tol and 1 <= k <= n_points - 1


def _sector_polygon(apex, angle, half_width, length, arc_pts=48):
    thetas = np.linspace(angle - half_width, angle + half_width, arc_pts)
    pts = [tuple(apex)]
    pts.extend((apex[0] + length * math.cos(t), apex[1] + length * math.sin(t)) for t in thetas)
    return Polygon(pts)


def _cones_disjoint(Z_points, angles, delta, length) -> bool:
    polys = [
        _sector_polygon(p, angles[i], delta, length)
        for i, p in enumerate(Z_points)
        if i in angles
    ]
    for a in range(len(polys)):
        for b in range(a + 1, len(polys)):
            if polys[a].intersects(polys[b]):
                return False
    return True


def validate_splitting(n_points: int, Z: SingularSet, domain: geometry.DomainSpec) -> SplittingPlan:
    """Check the hypotheses on (N, weights) and build a concrete plan.

    Raises IntegerWeightObstruction when some weight equals one of 1..N-1,
    and NoSplitting when the per-source capacities cannot absorb N points.
    """
    if n_points < 1:
        raise ValueError("the number of concentration points must be at least 1")
    Z.validate_in(domain)
    P, alphas = Z.arrays()

    for i, a in enumerate(alphas):
        if _integer_weight_conflict(float(a), n_points):
            raise IntegerWeightObstruction(i, float(a), n_points)

    caps = [_max_points_for_weight(float(a)) for a in alphas]
    if sum(caps) < n_points:
        raise NoSplitting(
            f"capacities {caps} absorb at most {sum(caps)} points; {n_points} requested"
        )
    counts = {i: 0 for i in range(len(Z))}
    remaining = n_points
    for i in sorted(range(len(Z)), key=lambda i: (-caps[i], i)):
        take = min(caps[i], remaining)
        counts[i] = take
        remaining -= take
    assert remaining == 0

    # cone axes: point away from the nearest other source (any axis for a
    # singleton), then shrink delta until the sectors are pairwise disjoint
    # and the annuli fit inside the domain and avoid each other
    angles = {}
    for i, p in enumerate(P):
        if len(P) == 1:
            angles[i] = 0.0
        else:
            others = np.delete(P, i, axis=0)
            d2 = np.einsum("ij,ij->i", others - p, others - p)
            q = others[int(np.argmin(d2))]
            angles[i] = math.atan2(p[1] - q[1], p[0] - q[0])

    d_min = min(geometry.dist_to_boundary(domain, p) for p in P)
    sep_min = math.inf
    for a in range(len(P)):
        for b in range(a + 1, len(P)):
            sep_min = min(sep_min, float(np.hypot(*(P[a] - P[b]))))
    delta = 0.1 * min(d_min, sep_min / 4.0)
    length = 1.5 * domain.diameter
    for _ in range(200):
        if (
            delta < math.pi / 2
            and d_min > 2.0 * delta
            and (sep_min > 4.0 * delta)
            and _cones_disjoint(P, angles, delta, length)
        ):
            break
        delta *= 0.8
    else:
        raise NoSplitting("could not find disjoint cones for the sources")
    return SplittingPlan(counts=counts, angles=angles, delta=delta, total=n_points)


def initial_configuration(plan: SplittingPlan, Z: SingularSet) -> Configuration:
    """Seed points at radius 1.5*delta on slightly fanned-out cone rays."""
    P, _ = Z.arrays()
    xs = np.zeros((plan.total, 2))
    n = plan.total
    for idx, block in plan.blocks().items():
        p = P[idx]
        th = plan.angles[idx]
        for j in block:
            ang = th + (j + 1) * plan.delta / n  # 1-based global index
            xs[j] = p + 1.5 * plan.delta * np.array([math.cos(ang), math.sin(ang)])
    return Configuration(xs)


# ---------------------------------------------------------------------------
# minimization over the annulus class


@dataclass
class KMinimizeResult:
    configuration: Configuration
    psi_value: float
    projected_grad_norm: float
    converged: bool
    iterations: int
    trace: list  # (iteration, psi, projected_grad_norm) rows
    term_path: list  # (robin_sum, source_sum, pair_sum) rows


def _project_to_class(xs, plan: SplittingPlan, Z: SingularSet, floor: float):
    """Clamp each point to its annulus and enforce the pair floor."""
    P, _ = Z.arrays()
    out = xs.copy()
    lo = plan.delta * (1.0 + 1e-12)
    hi = 2.0 * plan.delta * (1.0 - 1e-12)
    for idx, block in plan.blocks().items():
        p = P[idx]
        for j in block:
            v = out[j] - p
            r = math.hypot(v[0], v[1])
            if r == 0.0:
                out[j] = p + np.array([lo, 0.0])
                continue
            r_cl = min(max(r, lo), hi)
            if r_cl != r:
                out[j] = p + v * (r_cl / r)
    for _ in range(8):
        moved = False
        n = len(out)
        for j in range(n):
            for k in range(j + 1, n):
                d = out[j] - out[k]
                r = math.hypot(d[0], d[1])
                if r < floor:
                    if r == 0.0:
                        d = np.array([floor, 0.0])
                        r = floor
                    push = 0.5 * (floor * (1.0 + 1e-9) - r)
                    out[j] = out[j] + d / r * push
                    out[k] = out[k] - d / r * push
                    moved = True
        if not moved:
            break
        # re-clamp radii disturbed by the pair repair
        for idx, block in plan.blocks().items():
            p = P[idx]
            for j in block:
                v = out[j] - p
                r = math.hypot(v[0], v[1])
                r_cl = min(max(r, lo), hi)
                if r_cl != r and r > 0:
                    out[j] = p + v * (r_cl / r)
    return out


def minimize_in_class(
    plan: SplittingPlan,
    Z: SingularSet,
    green: GreenEngine,
    separation_floor: float | None = None,
    grad_tol: float = 1e-8,
    max_iter: int = 10000,
    start: Configuration | None = None,
) -> KMinimizeResult:
    """Projected gradient descent of the energy over the annulus class."""
    if separation_floor is None:
        separation_floor = plan.delta / 100.0
    xs = (start or initial_configuration(plan, Z)).xs.copy()
    xs = _project_to_class(xs, plan, Z, separation_floor)
    rep = energy_report(green, Z, Configuration(xs))
    f = rep.psi
    t = plan.delta * 0.1
    t_ref = 1e-3 * plan.delta
    trace = []
    term_path = [(rep.robin_sum, rep.source_sum, rep.pair_sum)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = rep.grad_psi
        pg = (xs - _project_to_class(xs - t_ref * g, plan, Z, separation_floor)) / t_ref
        pg_norm = float(np.sqrt((pg**2).sum()))
        trace.append((it, f, pg_norm))
        if pg_norm < grad_tol:
            converged = True
            break
        accepted = False
        t = min(t * 2.0, plan.delta)
        for _ in range(60):
            cand = _project_to_class(xs - t * g, plan, Z, separation_floor)
            step = cand - xs
            move2 = float((step**2).sum())
            if move2 == 0.0:  # projection pinned the iterate; no progress possible
                break
            try:
                f_cand = psi(green, Z, Configuration(cand))
            except InvalidConfiguration:
                t *= 0.5
                continue
            if f_cand <= f - 1e-4 / max(t, 1e-300) * move2 and f_cand < f:
                xs, f = cand, f_cand
                rep = energy_report(green, Z, Configuration(xs))
                term_path.append((rep.robin_sum, rep.source_sum, rep.pair_sum))
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = pg_norm < 10 * grad_tol
            break
    return KMinimizeResult(
        configuration=Configuration(xs),
        psi_value=f,
        projected_grad_norm=trace[-1][2] if trace else 0.0,
        converged=converged,
        iterations=it,
        trace=trace,
        term_path=term_path,
    )


# ---------------------------------------------------------------------------
# refinement to a critical point


@dataclass
class CriticalPointReport:
    xi_star: Configuration
    psi_value: float
    grad_norm: float
    hessian_signature: tuple  # (n_plus, n_minus, n_zero)
    classification: str
    min_pair_distance: float
    min_source_distance: float
    min_boundary_distance: float
    converged: bool
    iterations: int
    status: str = "ok"

    def to_json(self):
        return {
            "xi_star": self.xi_star.to_json(),
            "psi_value": self.psi_value,
            "grad_norm": self.grad_norm,
            "hessian_signature": list(self.hessian_signature),
            "classification": self.classification,
            "min_pair_distance": self.min_pair_distance,
            "min_source_distance": self.min_source_distance,
            "min_boundary_distance": self.min_boundary_distance,
            "converged": self.converged,
            "iterations": self.iterations,
            "status": self.status,
        }


def fd_hessian(green: GreenEngine, Z: SingularSet, xi: Configuration, step: float) -> np.ndarray:
    """Central finite differences of the analytic gradient, symmetrized."""
    n = xi.n
    dim = 2 * n
    H = np.zeros((dim, dim))
    for c in range(dim):
        dx = np.zeros((n, 2))
        dx[c // 2, c % 2] = step
        gp = grad_psi(green, Z, Configuration(xi.xs + dx))
        gm = grad_psi(green, Z, Configuration(xi.xs - dx))
        H[:, c] = ((gp - gm) / (2.0 * step)).ravel()
    return 0.5 * (H + H.T)


def hessian_signature(H: np.ndarray, zero_tol_factor: float = 1e-6):
    lam = np.linalg.eigvalsh(H)
    scale = float(np.abs(lam).max()) if len(lam) else 0.0
    tol = zero_tol_factor * scale
    n_plus = int((lam > tol).sum())
    n_minus = int((lam < -tol).sum())
    n_zero = len(lam) - n_plus - n_minus
    return (n_plus, n_minus, n_zero), lam


def _classify(sig):
    n_plus, n_minus, _ = sig
    if n_minus == 0 and n_plus > 0:
        return "minimum"
    if n_plus == 0 and n_minus > 0:
        return "maximum"
    if n_plus > 0 and n_minus > 0:
        return "saddle"
    return "degenerate"


def saddle_refine(
    start: Configuration,
    Z: SingularSet,
    green: GreenEngine,
    grad_tol: float = 1e-7,
    hess_step: float | None = None,
    max_iter: int = 200,
    max_halvings: int = 40,
) -> CriticalPointReport:
    """Drive the gradient to zero by damped Newton with |grad|^2 line search.

    The Newton system uses a finite-difference Hessian solved in the
    least-squares sense, so exact symmetry null directions (rotations) are
    harmless.  Iterates must stay admissible; steps are halved when they
    escape, and a stall above tolerance is reported rather than accepted.
    """
    ensure_admissible(green, Z, start)
    if hess_step is None:
        hess_step = 1e-4 * min(
            start.min_pair_distance(),
            start.min_source_distance(Z),
            start.min_boundary_distance(green.domain),
        )
    xs = start.xs.copy()
    n = start.n
    g = grad_psi(green, Z, Configuration(xs))
    gnorm2 = float((g**2).sum())
    it = 0
    status = "ok"
    converged = False
    for it in range(1, max_iter + 1):
        if math.sqrt(gnorm2) < grad_tol:
            converged = True
            break
        H = fd_hessian(green, Z, Configuration(xs), hess_step)
        step_vec, *_ = np.linalg.lstsq(H, -g.ravel(), rcond=1e-12)
        step = step_vec.reshape(n, 2)
        t = 1.0
        accepted = False
        escaped = 0
        for _ in range(max_halvings):
            cand = xs + t * step
            try:
                g_cand = grad_psi(green, Z, Configuration(cand))
            except InvalidConfiguration:
                escaped += 1
                t *= 0.5
                continue
            c2 = float((g_cand**2).sum())
            if c2 < gnorm2:
                xs, g, gnorm2 = cand, g_cand, c2
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if escaped >= max_halvings:
                raise EscapedDomain("all step fractions left the admissible set")
            # steepest descent on |grad|^2 as a fallback
            dirn = -(H @ g.ravel()).reshape(n, 2)
            t = 1.0
            for _ in range(max_halvings):
                cand = xs + t * dirn
                try:
                    g_cand = grad_psi(green, Z, Configuration(cand))
                except InvalidConfiguration:
                    t *= 0.5
                    continue
                c2 = float((g_cand**2).sum())
                if c2 < gnorm2:
                    xs, g, gnorm2 = cand, g_cand, c2
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                status = "zero_gradient_spurious"
                break
    else:
        status = "iteration_limit"

    cfg = Configuration(xs)
    H = fd_hessian(green, Z, cfg, hess_step)
    sig, _ = hessian_signature(H)
    return CriticalPointReport(
        xi_star=cfg,
        psi_value=psi(green, Z, cfg),
        grad_norm=math.sqrt(gnorm2),
        hessian_signature=sig,
        classification=_classify(sig),
        min_pair_distance=cfg.min_pair_distance(),
        min_source_distance=cfg.min_source_distance(Z),
        min_boundary_distance=cfg.min_boundary_distance(green.domain),
        converged=converged,
        iterations=it,
        status=status,
    )


def multistart_refine(
    plan: SplittingPlan,
    Z: SingularSet,
    green: GreenEngine,
    seed: int,
    n_starts: int = 8,
    grad_tol: float = 1e-7,
    jobs: int = 1,
) -> list[CriticalPointReport]:
    """Refine from seeded perturbations of the class minimizer.

    Detects non-uniqueness; results are returned in start order regardless of
    the number of workers.
    """
    base = minimize_in_class(plan, Z, green).configuration
    rng = np.random.default_rng(seed)
    starts = [base.xs.copy()]
    for _ in range(n_starts - 1):
        starts.append(base.xs + rng.uniform(-plan.delta / 4, plan.delta / 4, base.xs.shape))

    def run(xs):
        return saddle_refine(Configuration(xs), Z, green, grad_tol=grad_tol,
                             hess_step=1e-4 * plan.delta)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(run, starts))
    return [run(xs) for xs in starts]


# ---------------------------------------------------------------------------
# collision scan


@dataclass
class CollisionScan:
    rows: list  # (rho, psi, grad_norm, slope_estimate)
    final_slope: float
    predicted_slope: float

    def to_csv_rows(self):
        return [
            {"rho": r, "psi": p, "grad_norm": g, "slope_estimate": s}
            for (r, p, g, s) in self.rows
        ]


def collision_slope_coefficient(n_sides: int, alpha: float) -> float:
    """Leading rate of the energy against log(1/rho) for a shrinking regular
    n-gon around a source of weight alpha: n (n - 1 - alpha) / (4 pi).

    Zero exactly at alpha = n - 1, where the pair repulsion of the n points
    balances the attraction of the source.
    """
    return n_sides * (n_sides - 1.0 - alpha) / FOUR_PI


def collision_scan(
    green: GreenEngine,
    Z: SingularSet,
    p_index: int,
    n_sides: int,
    rho_sequence,
    center_offset=(0.0, 0.0),
    theta0: float = 0.0,
) -> CollisionScan:
    """Energy along shrinking regular polygons centered near a source."""
    P, alphas = Z.arrays()
    center = P[p_index] + np.asarray(center_offset, dtype=float)
    rows = []
    prev = None
    for rho in rho_sequence:
        ang = theta0 + 2.0 * math.pi * np.arange(n_sides) / n_sides
        xs = center + rho * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        cfg = Configuration(xs)
        if not all(geometry.contains(green.domain, x) for x in xs):
            raise InvalidConfiguration("polygon exits the domain")
        value = psi(green, Z, cfg)
        gn = float(np.sqrt((grad_psi(green, Z, cfg) ** 2).sum()))
        slope = math.nan
        if prev is not None:
            rho_p, val_p = prev
            slope = (value - val_p) / (math.log(1.0 / rho) - math.log(1.0 / rho_p))
        rows.append((float(rho), value, gn, slope))
        prev = (rho, value)
    return CollisionScan(
        rows=rows,
        final_slope=rows[-1][3] if len(rows) > 1 else math.nan,
        predicted_slope=collision_slope_coefficient(n_sides, float(alphas[p_index])),
    )
