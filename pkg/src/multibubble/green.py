"""Dirichlet Green's function, its regular part, and their gradients.

Two backends share one interface.  On the unit disk everything is closed form
through the inverted source point y/|y|^2 (method of images); the regular part
is H(x,y) = (1/4pi) log(|x|^2 |y|^2 - 2 x.y + 1) and the diagonal H(x,x) is
the Robin function (1/2pi) log(1 - |x|^2).  On general domains the regular
part is obtained by harmonically extending the boundary trace of the
free-space kernel on a finite-difference grid; the logarithmic singularity is
always carried analytically, never discretized.

The disk backend doubles as the accuracy oracle for the grid backend.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import CoincidentPoints, PointOutsideDomain
from .fdgrid import FDGrid, GridField

TWO_PI = 2.0 * math.pi


def _interior_or_raise(domain, x):
    if not geometry.contains(domain, x):
        raise PointOutsideDomain(f"{tuple(np.asarray(x))} is not interior")


def free_space_kernel(x, y):
    """(1/2pi) log(1/|x-y|)."""
    r = math.hypot(x[0] - y[0], x[1] - y[1])
    if r == 0.0:
        raise CoincidentPoints("kernel evaluated on the diagonal")
    return -math.log(r) / TWO_PI


class GreenEngine:
    """Common interface; see DiskGreen and GridGreen."""

    domain: geometry.DomainSpec

    @property
    def diameter(self) -> float:
        return self.domain.diameter

    # single-point API -------------------------------------------------

    def green(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _interior_or_raise(self.domain, x)
        _interior_or_raise(self.domain, y)
        return free_space_kernel(x, y) + self.robin_regular(x, y)

    def robin_regular(self, x, y) -> float:
        raise NotImplementedError

    def grad_x_robin(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def grad_x_green(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        r2 = float(d @ d)
        if r2 == 0.0:
            raise CoincidentPoints("gradient of G on the diagonal")
        return -d / (TWO_PI * r2) + self.grad_x_robin(x, y)

    def robin_diag(self, x) -> float:
        """Robin function H(x, x)."""
        return self.robin_regular(x, x)

    def robin_diag_grad(self, x) -> np.ndarray:
        """Gradient in the first slot at coincident arguments.

        Equals half the derivative of xi -> H(xi, xi) by symmetry of H.
        """
        raise NotImplementedError

    # vectorized API (hot paths) ----------------------------------------

    def robin_many(self, X, y) -> np.ndarray:
        return np.array([self.robin_regular(x, y) for x in np.asarray(X, dtype=float)])

    def green_many(self, X, y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(X[:, 0] - y[0], X[:, 1] - y[1])
        return -np.log(r) / TWO_PI + self.robin_many(X, y)

    # diagnostics --------------------------------------------------------

    @property
    def gradient_floor(self) -> float:
        """Smallest boundary distance at which gradients are evaluable."""
        return 0.0

    def check_boundary_expansion(self, x_sequence, y) -> "BoundaryExpansionReport":
        """Deviations of H and of its normal derivative from the reflected
        kernel along a sequence of collar points approaching the boundary.

        The derivative deviation is only recorded at points the backend can
        differentiate (grid backends need a few finite-difference steps of
        room); the value deviation covers the whole sequence.
        """
        y = np.asarray(y, dtype=float)
        h_dev, n_dev, dists, n_dists = [], [], [], []
        for x in x_sequence:
            x = np.asarray(x, dtype=float)
            xbar = geometry.reflect(self.domain, x)
            nu = geometry.inward_normal(self.domain, x)
            d = geometry.dist_to_boundary(self.domain, x)
            rbar = math.hypot(xbar[0] - y[0], xbar[1] - y[1])
            h_dev.append(abs(self.robin_regular(x, y) + math.log(1.0 / rbar) / TWO_PI))
            dists.append(d)
            if d > self.gradient_floor:
                dn = float(self.grad_x_robin(x, y) @ nu)
                pred = float((y - xbar) @ nu) / (TWO_PI * rbar**2)
                n_dev.append(abs(dn - pred))
                n_dists.append(d)
        return BoundaryExpansionReport(
            distances=np.array(dists),
            h_deviation=np.array(h_dev),
            normal_deviation=np.array(n_dev),
            normal_distances=np.array(n_dists),
        )


@dataclass
class BoundaryExpansionReport:
    distances: np.ndarray
    h_deviation: np.ndarray
    normal_deviation: np.ndarray
    normal_distances: np.ndarray

    @property
    def sup_h(self) -> float:
        return float(self.h_deviation.max())

    @property
    def sup_normal(self) -> float:
        return float(self.normal_deviation.max())


class DiskGreen(GreenEngine):
    """Closed-form engine on the unit disk."""

    def __init__(self, domain: geometry.DomainSpec | None = None):
        if domain is None:
            domain = geometry.unit_disk()
        if domain.kind != "unit_disk":
            raise ValueError("closed-form engine requires the unit disk")
        self.domain = domain

    @staticmethod
    def _s2(x, y):
        # |x - y/|y|^2|^2 |y|^2 = |x|^2 |y|^2 - 2 x.y + 1
        return float(x @ x) * float(y @ y) - 2.0 * float(x @ y) + 1.0

    def robin_regular(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _interior_or_raise(self.domain, x)
        _interior_or_raise(self.domain, y)
        return math.log(self._s2(x, y)) / (2.0 * TWO_PI)

    def robin_many(self, X, y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        s2 = np.einsum("ij,ij->i", X, X) * float(y @ y) - 2.0 * (X @ y) + 1.0
        return np.log(s2) / (2.0 * TWO_PI)

    def grad_x_robin(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s2 = self._s2(x, y)
        return (float(y @ y) * x - y) / (TWO_PI * s2)

    def robin_diag(self, x) -> float:
        x = np.asarray(x, dtype=float)
        _interior_or_raise(self.domain, x)
        return math.log(1.0 - float(x @ x)) / TWO_PI

    def robin_diag_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return -x / (TWO_PI * (1.0 - float(x @ x)))


class GridGreen(GreenEngine):
    """Finite-difference engine for general (or disk) domains.

    Each source point y gets one harmonic solve with boundary data
    (1/2pi) log|b - y|; solves are cached.  Cache keys quantize the source to
    h/4 to bound memory, but the exact source is stored with each entry and a
    mismatch recomputes, so quantization never trades accuracy.
    """

    def __init__(self, domain: geometry.DomainSpec, grid_n: int = 256, cache_size: int = 256):
        self.domain = domain
        self.grid = FDGrid(domain, grid_n)
        self.cache_size = cache_size
        self._cache: OrderedDict[tuple, tuple[tuple, GridField]] = OrderedDict()
        self._cache_lock = threading.Lock()
        self._fd_step = 1e-5 * self.domain.diameter

    # -- cached harmonic extensions of the kernel trace -----------------

    def _field_for_source(self, y) -> GridField:
        y = np.asarray(y, dtype=float)
        q = self.grid.h / 4.0
        key = (round(y[0] / q), round(y[1] / q))
        exact = (float(y[0]), float(y[1]))
        with self._cache_lock:
            hit = self._cache.get(key)
            if hit is not None and hit[0] == exact:
                self._cache.move_to_end(key)
                return hit[1]

        def bdata(pts):
            r = np.hypot(pts[:, 0] - y[0], pts[:, 1] - y[1])
            return np.log(r) / TWO_PI

        field = self.grid.solve_laplace(bdata)
        with self._cache_lock:
            self._cache[key] = (exact, field)
            self._cache.move_to_end(key)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return field

    def harmonic_extension(self, boundary_data) -> GridField:
        """Solve the 5-point Laplace problem with the given Dirichlet data.

        boundary_data maps an (M,2) array of boundary points to M values.
        """
        return self.grid.solve_laplace(boundary_data)

    def robin_regular(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _interior_or_raise(self.domain, x)
        _interior_or_raise(self.domain, y)
        return float(self._field_for_source(y).value(x))

    def robin_many(self, X, y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self._field_for_source(np.asarray(y, dtype=float)).value_many(X)

    def grad_x_robin(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self._field_for_source(y).gradient(x, step=self._fd_step)

    def robin_diag(self, x) -> float:
        x = np.asarray(x, dtype=float)
        _interior_or_raise(self.domain, x)
        return float(self._field_for_source(x).value(x))

    def robin_diag_grad(self, x) -> np.ndarray:
        # by symmetry the first-slot gradient at coincident arguments is the
        # x-gradient of the extension for source x, evaluated at x
        x = np.asarray(x, dtype=float)
        return self._field_for_source(x).gradient(x, step=self._fd_step)

    @property
    def gradient_floor(self) -> float:
        # below a few cells from the boundary the interpolated gradient is
        # dominated by the cut-cell blend; keep derivative checks out of it
        return 4.0 * self.grid.h

    def dump_robin_field(self, y, path):
        """Debug dump of the regular-part field for one source as x,y,value CSV."""
        fld = self._field_for_source(np.asarray(y, dtype=float))
        pts = self.grid.points
        lines = ["x,y,value"]
        for p, v in zip(pts, fld.values):
            lines.append(f"{p[0]!r},{p[1]!r},{v!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def make_green_engine(domain: geometry.DomainSpec, method: str = "auto", grid_n: int = 256) -> GreenEngine:
    """Engine factory: closed form on the disk, grid solves elsewhere."""
    if method == "auto":
        method = "closed_form" if domain.kind == "unit_disk" else "grid"
    if method in ("closed_form", "disk"):
        return DiskGreen(domain)
    if method == "grid":
        return GridGreen(domain, grid_n=grid_n)
    raise ValueError(f"unknown green engine method {method!r}")
