"""Planar domain geometry.

Two domain shapes are supported: the unit disk and star-shaped domains whose
boundary is given in polar form by a truncated Fourier series
r(theta) = a0 + sum_k (a_k cos k*theta + b_k sin k*theta).  All operations
(membership, distance to the boundary, nearest-boundary projection, reflection
across the boundary, inward normal) are pure functions of the immutable
description.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePoint, OutsideCollar, PointOutsideDomain

_N_THETA_SAMPLES = 256
_GOLDEN_TOL = 1e-10


def _as_point(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.shape != (2,):
        raise ValueError(f"expected a planar point, got shape {p.shape}")
    return p


@dataclass(frozen=True)
class DomainSpec:
    """Description of a bounded planar domain.

    kind is "unit_disk" or "star".  For "star", ``coeffs`` holds the Fourier
    coefficients of the polar radius as [[a0], [a1, b1], [a2, b2], ...];
    collar_width is the strip near the boundary inside which the nearest
    boundary point is unique (checked by sampling at construction).
    """

    kind: str
    coeffs: tuple = ()
    collar_width: float = 0.0

    def __post_init__(self):
        if self.kind not in ("unit_disk", "star"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "star":
            if not self.coeffs:
                raise ValueError("star domain needs Fourier coefficients")
            coeffs = tuple(tuple(float(c) for c in row) for row in self.coeffs)
            object.__setattr__(self, "coeffs", coeffs)
            rmin = float(np.min(self._radius_samples()))
            if rmin <= 0.0:
                raise ValueError("polar radius must be positive for all angles")
            if self.collar_width <= 0.0:
                object.__setattr__(self, "collar_width", 0.2 * rmin)
        else:
            if self.collar_width <= 0.0:
                object.__setattr__(self, "collar_width", 0.5)
        _check_collar_uniqueness(self)

    # -- polar radius ------------------------------------------------------

    def radius_fn(self, theta):
        """Polar boundary radius r(theta); vectorized over theta."""
        if self.kind == "unit_disk":
            return np.ones_like(np.asarray(theta, dtype=float))
        theta = np.asarray(theta, dtype=float)
        r = np.full_like(theta, self.coeffs[0][0])
        for k in range(1, len(self.coeffs)):
            row = self.coeffs[k]
            a_k = row[0]
            b_k = row[1] if len(row) > 1 else 0.0
            r = r + a_k * np.cos(k * theta) + b_k * np.sin(k * theta)
        return r

    def _radius_samples(self, n=4096):
        return self.radius_fn(np.linspace(0.0, 2.0 * math.pi, n, endpoint=False))

    def boundary_point(self, theta):
        r = self.radius_fn(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    # -- coarse global quantities -----------------------------------------

    @property
    def diameter(self) -> float:
        if self.kind == "unit_disk":
            return 2.0
        samples = self._radius_samples(1024)
        return 2.0 * float(np.max(samples))

    def bounding_box(self):
        """(xmin, xmax, ymin, ymax) containing the closure of the domain."""
        if self.kind == "unit_disk":
            return (-1.0, 1.0, -1.0, 1.0)
        thetas = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
        pts = self.boundary_point(thetas)
        return (
            float(pts[:, 0].min()),
            float(pts[:, 0].max()),
            float(pts[:, 1].min()),
            float(pts[:, 1].max()),
        )

    def to_json(self) -> dict:
        if self.kind == "unit_disk":
            return {"kind": "unit_disk"}
        return {
            "kind": "star",
            "coeffs": [list(row) for row in self.coeffs],
            "collar": self.collar_width,
        }

    @staticmethod
    def from_json(obj: dict) -> "DomainSpec":
        kind = obj["kind"]
        if kind == "unit_disk":
            return DomainSpec(kind="unit_disk")
        return DomainSpec(
            kind="star",
            coeffs=tuple(tuple(row) for row in obj["coeffs"]),
            collar_width=float(obj.get("collar", 0.0)),
        )


def unit_disk() -> DomainSpec:
    return DomainSpec(kind="unit_disk")


def star_domain(coeffs, collar_width=0.0) -> DomainSpec:
    return DomainSpec(kind="star", coeffs=tuple(tuple(r) for r in coeffs), collar_width=collar_width)


# ---------------------------------------------------------------------------
# membership and signed interior function


def contains(domain: DomainSpec, x) -> bool:
    """True iff x lies strictly inside the domain."""
    x = _as_point(x)
    if domain.kind == "unit_disk":
        return float(x @ x) < 1.0
    rho = math.hypot(x[0], x[1])
    if rho == 0.0:
        return True
    theta = math.atan2(x[1], x[0])
    return rho < float(domain.radius_fn(theta))


def contains_many(domain: DomainSpec, pts: np.ndarray) -> np.ndarray:
    """Vectorized strict membership test for an (M, 2) array."""
    pts = np.asarray(pts, dtype=float)
    if domain.kind == "unit_disk":
        return np.einsum("ij,ij->i", pts, pts) < 1.0
    rho = np.hypot(pts[:, 0], pts[:, 1])
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    return rho < domain.radius_fn(theta)


def interior_function(domain: DomainSpec, pts: np.ndarray) -> np.ndarray:
    """Signed function positive inside, negative outside (not a distance)."""
    pts = np.asarray(pts, dtype=float)
    if domain.kind == "unit_disk":
        return 1.0 - np.einsum("...j,...j->...", pts, pts)
    rho = np.hypot(pts[..., 0], pts[..., 1])
    theta = np.arctan2(pts[..., 1], pts[..., 0])
    return domain.radius_fn(theta) - rho


# ---------------------------------------------------------------------------
# distance / projection


def _golden_refine(f, lo, hi, tol=_GOLDEN_TOL):
    """Golden-section minimization of f on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    t = 0.5 * (a + b)
    return t, f(t)


def _nearest_boundary_theta(domain: DomainSpec, x: np.ndarray) -> float:
    """Angle of the nearest boundary point of a star domain.

    The squared distance over 256 uniform angle samples is refined by
    golden-section search around every sampled local minimum.
    """
    thetas = np.linspace(0.0, 2.0 * math.pi, _N_THETA_SAMPLES, endpoint=False)
    pts = domain.boundary_point(thetas)
    d2 = np.sum((pts - x) ** 2, axis=1)
    step = 2.0 * math.pi / _N_THETA_SAMPLES

    def f(t):
        b = domain.boundary_point(np.array(t))
        return float((b[0] - x[0]) ** 2 + (b[1] - x[1]) ** 2)

    is_min = (d2 <= np.roll(d2, 1)) & (d2 <= np.roll(d2, -1))
    best_t, best_v = None, math.inf
    for i in np.nonzero(is_min)[0]:
        t, v = _golden_refine(f, thetas[i] - step, thetas[i] + step)
        if v < best_v:
            best_t, best_v = t, v
    return best_t


def dist_to_boundary(domain: DomainSpec, x) -> float:
    """Distance from an interior point to the boundary."""
    x = _as_point(x)
    if not contains(domain, x):
        raise PointOutsideDomain(f"point {tuple(x)} is not interior")
    if domain.kind == "unit_disk":
        return 1.0 - math.hypot(x[0], x[1])
    theta = _nearest_boundary_theta(domain, x)
    b = domain.boundary_point(np.array(theta))
    return float(math.hypot(b[0] - x[0], b[1] - x[1]))


def boundary_projection(domain: DomainSpec, x) -> np.ndarray:
    """Nearest boundary point; only valid inside the collar."""
    x = _as_point(x)
    d = dist_to_boundary(domain, x)
    if d >= domain.collar_width:
        raise OutsideCollar(
            f"d(x)={d:.6g} is not below the collar width {domain.collar_width:.6g}"
        )
    if domain.kind == "unit_disk":
        return x / math.hypot(x[0], x[1])
    theta = _nearest_boundary_theta(domain, x)
    return np.asarray(domain.boundary_point(np.array(theta)), dtype=float)


def reflect(domain: DomainSpec, x) -> np.ndarray:
    """Reflection 2 p(x) - x of a collar point across the boundary."""
    x = _as_point(x)
    return 2.0 * boundary_projection(domain, x) - x


def inward_normal(domain: DomainSpec, x) -> np.ndarray:
    """Unit vector from the nearest boundary point toward x."""
    x = _as_point(x)
    p = boundary_projection(domain, x)
    v = x - p
    n = math.hypot(v[0], v[1])
    if n == 0.0:
        raise DegeneratePoint("point lies on the boundary")
    return v / n


# ---------------------------------------------------------------------------
# grid support: boundary crossing along an axis segment


def boundary_crossing(domain: DomainSpec, x: np.ndarray, direction: np.ndarray, h: float) -> float:
    """Arclength s in (0, h] at which x + s*direction crosses the boundary.

    x must be interior and x + h*direction outside (or on) the boundary.
    """
    x = np.asarray(x, dtype=float)
    e = np.asarray(direction, dtype=float)
    if domain.kind == "unit_disk":
        # |x + s e|^2 = 1, |e| = 1
        b = float(x @ e)
        c = float(x @ x) - 1.0
        s = -b + math.sqrt(b * b - c)
        return min(max(s, 0.0), h)

    def g(s):
        return -float(interior_function(domain, x + s * e))

    lo, hi = 0.0, h
    glo, ghi = g(lo), g(hi)
    if ghi < 0.0:  # endpoint is (numerically) inside; snap to the far end
        return h
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * h:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# construction-time collar validation


def _check_collar_uniqueness(domain: DomainSpec):
    """Sample the collar and fail loudly if projections are ambiguous.

    For points placed a known depth along the inward boundary normal, the
    recovered projection must land back near the seeding boundary point.
    """
    if domain.kind == "unit_disk":
        if domain.collar_width >= 1.0:
            raise ValueError("collar width must be below the inradius 1")
        return
    thetas = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    eps = 1e-6
    for th in thetas:
        b = domain.boundary_point(np.array(th))
        bp = domain.boundary_point(np.array(th + eps))
        tang = (bp - b) / eps
        nrm = np.array([tang[1], -tang[0]])
        nrm /= math.hypot(nrm[0], nrm[1])
        if float(nrm @ b) > 0.0:  # orient inward (toward the star center)
            nrm = -nrm
        for frac in (0.25, 0.5, 0.75, 0.999):
            x = b + frac * domain.collar_width * nrm
            if not contains(domain, x):
                raise ValueError(
                    f"collar width {domain.collar_width} exits the domain at theta={th:.3f}"
                )
            theta_star = _nearest_boundary_theta(domain, x)
            p = domain.boundary_point(np.array(theta_star))
            if math.hypot(p[0] - b[0], p[1] - b[1]) > 0.35 * domain.collar_width:
                raise ValueError(
                    "collar uniqueness sampling found two competing projections; "
                    "reduce collar_width"
                )
