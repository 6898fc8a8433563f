"""The singular weight, the renormalized interaction energy, and its gradient.

For a configuration xi = (xi_1, ..., xi_N) of candidate concentration points
the energy combines three effects: the Robin self-interaction with the
boundary, attraction/repulsion from the point sources through the Green's
function, and pairwise repulsion between the points:

    psi(xi) = 1/2 sum_j H(xi_j, xi_j)
              - sum_p (alpha_p / 2) sum_j G(xi_j, p)
              + 1/2 sum_{j != k} G(xi_j, xi_k).

The companion functional phi flips the sign of the pair term and tends to
-infinity on the admissible-set boundary, which makes it the natural barrier
for sublevel-set confinement.  All sums are accumulated with exact (fsum)
summation; near-collisions mix large logarithms of opposite sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import CoincidentPoints, InvalidConfiguration, PointAtSource
from .green import TWO_PI, GreenEngine

FOUR_PI = 2.0 * TWO_PI
EIGHT_PI = 4.0 * TWO_PI


@dataclass(frozen=True)
class SingularSet:
    """Finite set of interior point sources with positive weights."""

    points: tuple
    weights: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        wts = tuple(float(w) for w in self.weights)
        if len(pts) != len(wts):
            raise ValueError("points and weights must have the same length")
        if any(w <= 0.0 for w in wts):
            raise ValueError("all source weights must be positive")
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if pts[i] == pts[j]:
                    raise ValueError("source points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    def __len__(self):
        return len(self.points)

    def validate_in(self, domain: geometry.DomainSpec):
        for p in self.points:
            if not geometry.contains(domain, np.asarray(p)):
                raise ValueError(f"source {p} is not interior")

    def arrays(self):
        return np.asarray(self.points, dtype=float).reshape(len(self), 2), np.asarray(
            self.weights, dtype=float
        )

    def to_json(self):
        return {"points": [list(p) for p in self.points], "weights": list(self.weights)}

    @staticmethod
    def from_json(obj):
        return SingularSet(points=tuple(tuple(p) for p in obj["points"]), weights=tuple(obj["weights"]))


EMPTY_SOURCES = SingularSet(points=(), weights=())


@dataclass
class Configuration:
    """An N-tuple of candidate concentration points."""

    xs: np.ndarray

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        if self.xs.shape[1] != 2 or self.xs.shape[0] < 1:
            raise ValueError("configuration must be an (N, 2) array with N >= 1")

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    def min_pair_distance(self) -> float:
        if self.n < 2:
            return math.inf
        d = self.xs[:, None, :] - self.xs[None, :, :]
        r = np.hypot(d[..., 0], d[..., 1])
        r[np.diag_indices(self.n)] = math.inf
        return float(r.min())

    def min_source_distance(self, Z: SingularSet) -> float:
        if len(Z) == 0:
            return math.inf
        P, _ = Z.arrays()
        d = self.xs[:, None, :] - P[None, :, :]
        return float(np.hypot(d[..., 0], d[..., 1]).min())

    def min_boundary_distance(self, domain: geometry.DomainSpec) -> float:
        return min(geometry.dist_to_boundary(domain, x) for x in self.xs)

    def to_json(self):
        return [list(map(float, x)) for x in self.xs]

    @staticmethod
    def from_json(obj):
        return Configuration(np.asarray(obj, dtype=float))


def admissibility_floor(domain: geometry.DomainSpec) -> float:
    """Below this distance the Green evaluations lose all digits."""
    return 1e-9 * domain.diameter


def ensure_admissible(green: GreenEngine, Z: SingularSet, xi: Configuration):
    """Reject configurations outside the admissible set."""
    domain = green.domain
    floor = admissibility_floor(domain)
    for x in xi.xs:
        if not geometry.contains(domain, x):
            raise InvalidConfiguration(f"point {tuple(x)} is not interior")
    if xi.min_pair_distance() < floor:
        raise InvalidConfiguration("two configuration points (nearly) coincide")
    if xi.min_source_distance(Z) < floor:
        raise InvalidConfiguration("a configuration point (nearly) sits on a source")


# ---------------------------------------------------------------------------
# singular weight


def log_weight(green: GreenEngine, Z: SingularSet, X, strict: bool = True) -> np.ndarray:
    """log a(x) for an (M, 2) array of interior points, vectorized.

    With strict=False, points at a source give -inf (the weight vanishes
    there) instead of raising; quadrature over densities a(x) e^v needs this.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(len(X))
    if len(Z) == 0:
        return out
    P, alphas = Z.arrays()
    floor = admissibility_floor(green.domain)
    for p, a_p in zip(P, alphas):
        r = np.hypot(X[:, 0] - p[0], X[:, 1] - p[1])
        if strict and np.any(r < floor):
            raise PointAtSource("log-weight evaluated at a source point")
        with np.errstate(divide="ignore"):
            out += -FOUR_PI * a_p * green.robin_many(X, p) + 2.0 * a_p * np.log(r)
    return out


def weight_a(green: GreenEngine, Z: SingularSet, x) -> float:
    """The positive weight a(x); computed in log space, exponentiated once."""
    return float(np.exp(log_weight(green, Z, np.asarray(x, dtype=float)[None, :])[0]))


# ---------------------------------------------------------------------------
# energy, companion functional, gradient


@dataclass
class EnergyReport:
    psi: float
    phi: float
    grad_psi: np.ndarray
    grad_norm: float
    robin_sum: float
    source_sum: float
    pair_sum: float

    def to_json(self):
        return {
            "psi": self.psi,
            "phi": self.phi,
            "grad_psi": [list(map(float, g)) for g in self.grad_psi],
            "grad_norm": self.grad_norm,
            "robin_sum": self.robin_sum,
            "source_sum": self.source_sum,
            "pair_sum": self.pair_sum,
        }


def _terms(green: GreenEngine, Z: SingularSet, xi: Configuration):
    xs = xi.xs
    n = xi.n
    robin = [0.5 * green.robin_diag(xs[j]) for j in range(n)]
    source = []
    if len(Z) > 0:
        P, alphas = Z.arrays()
        for p, a_p in zip(P, alphas):
            for j in range(n):
                source.append(0.5 * a_p * green.green(xs[j], p))
    pair = []
    for j in range(n):
        for k in range(j + 1, n):
            pair.append(green.green(xs[j], xs[k]))  # counts (j,k) and (k,j)
    return math.fsum(robin), math.fsum(source), math.fsum(pair)


def energy_report(green: GreenEngine, Z: SingularSet, xi: Configuration) -> EnergyReport:
    """Energy, companion value, gradient, and the term breakdown."""
    ensure_admissible(green, Z, xi)
    robin_sum, source_sum, pair_sum = _terms(green, Z, xi)
    grads = grad_psi(green, Z, xi, _checked=True)
    gnorm = float(np.sqrt((grads**2).sum()))
    return EnergyReport(
        psi=robin_sum - source_sum + pair_sum,
        phi=robin_sum - source_sum - pair_sum,
        grad_psi=grads,
        grad_norm=gnorm,
        robin_sum=robin_sum,
        source_sum=source_sum,
        pair_sum=pair_sum,
    )


def psi(green: GreenEngine, Z: SingularSet, xi: Configuration) -> float:
    ensure_admissible(green, Z, xi)
    robin_sum, source_sum, pair_sum = _terms(green, Z, xi)
    return robin_sum - source_sum + pair_sum


def phi(green: GreenEngine, Z: SingularSet, xi: Configuration) -> float:
    ensure_admissible(green, Z, xi)
    robin_sum, source_sum, pair_sum = _terms(green, Z, xi)
    return robin_sum - source_sum - pair_sum


def psi_via_weight(green: GreenEngine, Z: SingularSet, xi: Configuration) -> float:
    """Equivalent form using the singular weight instead of source terms.

    1/2 sum H(xi_j, xi_j) + (1/8pi) sum log a(xi_j) + pair term; agrees with
    psi() up to round-off and serves as a cross-check of the weight.
    """
    ensure_admissible(green, Z, xi)
    robin_sum, _, pair_sum = _terms(green, Z, xi)
    la = log_weight(green, Z, xi.xs)
    return robin_sum + math.fsum(la) / EIGHT_PI + pair_sum


def grad_psi(green: GreenEngine, Z: SingularSet, xi: Configuration, _checked=False) -> np.ndarray:
    """Per-point energy gradient, shape (N, 2).

    Component j: grad_x H(xi_j, xi_j) - sum_p (alpha_p/2) grad_x G(xi_j, p)
    + sum_{k != j} grad_x G(xi_j, xi_k), where the first term is half the
    derivative of the diagonal Robin map.
    """
    if not _checked:
        ensure_admissible(green, Z, xi)
    xs = xi.xs
    n = xi.n
    out = np.zeros((n, 2))
    P, alphas = Z.arrays() if len(Z) else (np.zeros((0, 2)), np.zeros(0))
    for j in range(n):
        comps_x, comps_y = [], []
        g = green.robin_diag_grad(xs[j])
        comps_x.append(g[0])
        comps_y.append(g[1])
        for p, a_p in zip(P, alphas):
            g = -0.5 * a_p * green.grad_x_green(xs[j], p)
            comps_x.append(g[0])
            comps_y.append(g[1])
        for k in range(n):
            if k == j:
                continue
            g = green.grad_x_green(xs[j], xs[k])
            comps_x.append(g[0])
            comps_y.append(g[1])
        out[j, 0] = math.fsum(comps_x)
        out[j, 1] = math.fsum(comps_y)
    return out


# ---------------------------------------------------------------------------
# exact pair identity


def pair_identity_check(points, base) -> float:
    """sum_{j != k} [(xi_j - xi_k) / |xi_j - xi_k|^2] . (xi_j - base).

    The value is #I(#I - 1)/2 for any geometry: the (j, k) and (k, j) terms
    combine to exactly 1 per unordered pair.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    b = np.asarray(base, dtype=float)
    n = len(pts)
    terms = []
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            d = pts[j] - pts[k]
            r2 = float(d @ d)
            if r2 == 0.0:
                raise CoincidentPoints("pair identity needs distinct points")
            terms.append(float(d @ (pts[j] - b)) / r2)
    return math.fsum(terms)
