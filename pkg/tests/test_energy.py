import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multibubble.energy import (
    EMPTY_SOURCES,
    Configuration,
    SingularSet,
    energy_report,
    grad_psi,
    pair_identity_check,
    phi,
    psi,
    psi_via_weight,
    weight_a,
)
from multibubble.errors import (
    CoincidentPoints,
    InvalidConfiguration,
    PointAtSource,
)
from multibubble.green import TWO_PI

from conftest import sample_disk_points

FOUR_PI = 2.0 * TWO_PI


def random_admissible(rng, n_points, n_sources, min_sep=0.12):
    """Seeded rejection sampling of well-separated configurations + sources."""
    while True:
        pts = sample_disk_points(rng, n_points + n_sources, radius=0.75)
        ok = True
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.hypot(*(pts[i] - pts[j])) < min_sep:
                    ok = False
        if ok:
            break
    weights = rng.uniform(0.3, 2.7, n_sources)
    weights = np.where(np.abs(weights - np.round(weights)) < 0.05, weights + 0.07, weights)
    if n_sources:
        Z = SingularSet(points=tuple(map(tuple, pts[:n_sources])), weights=tuple(weights))
    else:
        Z = EMPTY_SOURCES
    return Z, Configuration(pts[n_sources:])


class TestWeight:
    def test_empty_sources_weight_is_one(self, disk_green):
        rng = np.random.default_rng(0)
        for x in sample_disk_points(rng, 10, radius=0.9):
            assert weight_a(disk_green, EMPTY_SOURCES, x) == pytest.approx(1.0, abs=1e-14)

    def test_disk_single_source_closed_form(self, disk_green):
        # H(., 0) = 0 on the disk, so the weight is |x|^(2 alpha)
        Z = SingularSet(points=((0.0, 0.0),), weights=(1.0,))
        rng = np.random.default_rng(1)
        for x in sample_disk_points(rng, 10, radius=0.9):
            if np.hypot(*x) < 1e-3:
                continue
            assert weight_a(disk_green, Z, x) == pytest.approx(float(x @ x), rel=1e-12)

    def test_positive_and_continuous(self, disk_green):
        Z = SingularSet(points=((0.3, 0.0), (-0.2, 0.4)), weights=(0.7, 1.3))
        rng = np.random.default_rng(2)
        for x in sample_disk_points(rng, 30, radius=0.9):
            if min(np.hypot(*(x - np.array(p))) for p in Z.points) < 1e-2:
                continue
            a0 = weight_a(disk_green, Z, x)
            a1 = weight_a(disk_green, Z, x + [1e-7, 0.0])
            assert a0 > 0.0
            assert abs(math.log(a1) - math.log(a0)) < 1e-4

    def test_at_source_raises(self, disk_green):
        Z = SingularSet(points=((0.3, 0.0),), weights=(1.0,))
        with pytest.raises(PointAtSource):
            weight_a(disk_green, Z, np.array([0.3, 0.0]))


class TestPsi:
    def test_single_point_center(self, disk_green):
        assert psi(disk_green, EMPTY_SOURCES, Configuration([[0.0, 0.0]])) == pytest.approx(
            0.0, abs=1e-14
        )

    def test_single_point_radial_value(self, disk_green):
        got = psi(disk_green, EMPTY_SOURCES, Configuration([[0.6, 0.0]]))
        assert got == pytest.approx(math.log(1 - 0.36) / FOUR_PI, abs=1e-13)
        assert got == pytest.approx(-0.03552, abs=1e-5)

    def test_form_equivalence(self, disk_green):
        rng = np.random.default_rng(3)
        for k in range(12):
            Z, xi = random_admissible(rng, rng.integers(1, 5), rng.integers(0, 3))
            assert psi(disk_green, Z, xi) == pytest.approx(
                psi_via_weight(disk_green, Z, xi), abs=1e-10
            )

    def test_relabeling_invariance(self, disk_green):
        rng = np.random.default_rng(4)
        Z, xi = random_admissible(rng, 4, 2)
        base = psi(disk_green, Z, xi)
        for _ in range(4):
            perm = rng.permutation(4)
            assert psi(disk_green, Z, Configuration(xi.xs[perm])) == pytest.approx(
                base, abs=1e-13
            )

    def test_report_breakdown_reconstructs(self, disk_green):
        rng = np.random.default_rng(5)
        Z, xi = random_admissible(rng, 3, 1)
        rep = energy_report(disk_green, Z, xi)
        assert rep.psi == pytest.approx(
            rep.robin_sum - rep.source_sum + rep.pair_sum, abs=1e-12
        )
        assert rep.phi == pytest.approx(
            rep.robin_sum - rep.source_sum - rep.pair_sum, abs=1e-12
        )

    def test_rejects_collisions(self, disk_green):
        with pytest.raises(InvalidConfiguration):
            psi(disk_green, EMPTY_SOURCES, Configuration([[0.1, 0.1], [0.1, 0.1 + 1e-12]]))
        Z = SingularSet(points=((0.2, 0.0),), weights=(1.0,))
        with pytest.raises(InvalidConfiguration):
            psi(disk_green, Z, Configuration([[0.2, 1e-12]]))


class TestPhi:
    def test_single_point_equals_psi(self, disk_green):
        xi = Configuration([[0.3, 0.2]])
        Z = SingularSet(points=((-0.2, 0.0),), weights=(0.8,))
        assert phi(disk_green, Z, xi) == pytest.approx(psi(disk_green, Z, xi), abs=1e-14)

    def test_sum_identity(self, disk_green):
        rng = np.random.default_rng(6)
        for _ in range(8):
            Z, xi = random_admissible(rng, 3, 1)
            rep = energy_report(disk_green, Z, xi)
            assert rep.psi + rep.phi == pytest.approx(
                2.0 * (rep.robin_sum - rep.source_sum), abs=1e-12
            )

    def test_phi_blows_down_at_collision(self, disk_green):
        # phi -> -inf monotonically as a pair distance shrinks
        base = np.array([[0.3, 0.0], [-0.3, 0.0]])
        vals = []
        for k in range(2, 14):
            sep = 2.0**-k
            xi = Configuration([[0.3, 0.0], [0.3 - sep, 0.0]])
            vals.append(phi(disk_green, EMPTY_SOURCES, xi))
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_psi_blows_up_at_collision(self, disk_green):
        vals = []
        for k in range(2, 14):
            sep = 2.0**-k
            xi = Configuration([[0.3, 0.0], [0.3 - sep, 0.0], [-0.4, 0.1]])
            vals.append(psi(disk_green, EMPTY_SOURCES, xi))
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestGradient:
    def test_center_is_critical(self, disk_green):
        g = grad_psi(disk_green, EMPTY_SOURCES, Configuration([[0.0, 0.0]]))
        assert np.abs(g).max() < 1e-14

    def test_against_finite_differences(self, disk_green):
        rng = np.random.default_rng(7)
        step = 1e-6
        for _ in range(25):
            Z, xi = random_admissible(rng, int(rng.integers(1, 6)), int(rng.integers(0, 4)))
            g = grad_psi(disk_green, Z, xi)
            fd = np.zeros_like(g)
            for j in range(xi.n):
                for c in range(2):
                    dx = np.zeros_like(xi.xs)
                    dx[j, c] = step
                    fd[j, c] = (
                        psi(disk_green, Z, Configuration(xi.xs + dx))
                        - psi(disk_green, Z, Configuration(xi.xs - dx))
                    ) / (2 * step)
            scale = max(np.abs(g).max(), 1e-12)
            assert np.abs(g - fd).max() / scale < 1e-5

    def test_mirror_symmetry(self, disk_green):
        xi = Configuration([[0.4, 0.0], [-0.4, 0.0]])
        g = grad_psi(disk_green, EMPTY_SOURCES, xi)
        assert g[0][0] == pytest.approx(-g[1][0], abs=1e-13)
        assert g[0][1] == pytest.approx(g[1][1], abs=1e-13)


class TestPairIdentity:
    def test_two_points(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-0.5, 0.5, (2, 2))
        base = rng.uniform(-0.5, 0.5, 2)
        assert pair_identity_check(pts, base) == pytest.approx(1.0, abs=1e-12)

    def test_five_points(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(-0.5, 0.5, (5, 2))
        assert pair_identity_check(pts, [0.1, 0.2]) == pytest.approx(10.0, abs=1e-11)

    def test_single_point_empty_sum(self):
        assert pair_identity_check([[0.2, 0.3]], [0.0, 0.0]) == 0.0

    def test_coincident_raises(self):
        with pytest.raises(CoincidentPoints):
            pair_identity_check([[0.1, 0.1], [0.1, 0.1]], [0.0, 0.0])

    @given(
        n=st.integers(min_value=2, max_value=8),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=80, deadline=None)
    def test_value_depends_only_on_count(self, n, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-3.0, 3.0, (n, 2))
        d = pts[:, None, :] - pts[None, :, :]
        r = np.hypot(d[..., 0], d[..., 1])
        r[np.diag_indices(n)] = 1.0
        if r.min() < 1e-6:
            return
        base = rng.uniform(-5.0, 5.0, 2)
        expected = n * (n - 1) / 2.0
        assert pair_identity_check(pts, base) == pytest.approx(expected, abs=1e-9)


class TestConeRayBound:
    def test_energy_bounded_on_shrinking_rays(self, disk_green):
        # points on fanned cone rays with the sub-capacity count: the energy
        # stays below a fixed constant as the radial scale shrinks
        Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
        delta = 0.1
        n = 2
        vals = []
        for k in range(0, 21):
            rho = 0.15 * 2.0**-k
            xs = [
                [rho * math.cos((j + 1) * delta / n), rho * math.sin((j + 1) * delta / n)]
                for j in range(n)
            ]
            vals.append(psi(disk_green, Z, Configuration(xs)))
        assert max(vals) < 10.0
        # and with an over-capacity count the same family is unbounded
        Z_bad = SingularSet(points=((0.0, 0.0),), weights=(0.5,))
        vals_bad = []
        for k in range(0, 15):
            rho = 0.15 * 2.0**-k
            xs = [
                [rho * math.cos((j + 1) * delta / n), rho * math.sin((j + 1) * delta / n)]
                for j in range(n)
            ]
            vals_bad.append(psi(disk_green, Z_bad, Configuration(xs)))
        assert vals_bad[-1] > vals_bad[0] + 0.5


def _mp_polygon_psi(alpha, n_sides, rho_str):
    """50-digit polygon energy on the unit disk with a center source."""
    import mpmath as mp

    mp.mp.dps = 50
    rho = mp.mpf(rho_str)
    pts = [
        (rho * mp.cos(2 * mp.pi * j / n_sides), rho * mp.sin(2 * mp.pi * j / n_sides))
        for j in range(n_sides)
    ]

    def H(p, q):
        s2 = (p[0] ** 2 + p[1] ** 2) * (q[0] ** 2 + q[1] ** 2) - 2 * (
            p[0] * q[0] + p[1] * q[1]
        ) + 1
        return mp.log(s2) / (4 * mp.pi)

    def G(p, q):
        r = mp.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)
        return mp.log(1 / r) / (2 * mp.pi) + H(p, q)

    def G0(p):  # source at the origin
        r = mp.sqrt(p[0] ** 2 + p[1] ** 2)
        return mp.log(1 / r) / (2 * mp.pi)

    val = mp.mpf(0)
    for j in range(n_sides):
        val += H(pts[j], pts[j]) / 2
        val -= mp.mpf(alpha) / 2 * G0(pts[j])
        for k in range(n_sides):
            if k != j:
                val += G(pts[j], pts[k]) / 2
    return val


@pytest.mark.parametrize(
    "n_minus_1,offset",
    [(1, 0.0), (2, 0.0), (1, 0.5), (1, -0.5), (2, 0.5), (3, -0.5)],
)
def test_polygon_halving_matches_high_precision_oracle(n_minus_1, offset):
    """Energy change per radius halving on (n+1)-gons around a weight-n source.

    The derived rate is (1/(4 pi)) (n+1) (n - alpha) per unit log(1/rho):
    zero at the balanced integer weight, +/- (n+1) log(2)/(8 pi) per halving
    at alpha = n -/+ 1/2.  Verified against a 50-digit evaluation.
    """
    import mpmath as mp

    n = n_minus_1
    alpha = n + offset
    sides = n + 1
    v1 = _mp_polygon_psi(alpha, sides, "1e-20")
    v2 = _mp_polygon_psi(alpha, sides, "5e-21")  # one halving
    per_halving = float(v2 - v1)
    predicted = sides * (n - alpha) / (4 * math.pi) * math.log(2.0)
    assert per_halving == pytest.approx(predicted, abs=1e-18)


def test_energy_report_serializes(disk_green):
    import json

    Z = SingularSet(points=((0.1, 0.0),), weights=(1.5,))
    xi = Configuration([[0.5, 0.1], [-0.4, 0.2]])
    rep = energy_report(disk_green, Z, xi)
    blob = json.dumps(rep.to_json())
    back = json.loads(blob)
    assert back["psi"] == pytest.approx(rep.psi)
    assert len(back["grad_psi"]) == 2
