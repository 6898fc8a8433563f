import math

import numpy as np
import pytest

from multibubble.bubbles import build_ansatz
from multibubble.energy import EMPTY_SOURCES, Configuration, SingularSet, log_weight
from multibubble.errors import GridTooCoarse, OverlappingBalls
from multibubble.errors import TestPointTooClose as FarfieldPointTooClose
from multibubble.fdgrid import FDGrid
from multibubble.green import TWO_PI
from multibubble.solver import (
    ball_mass,
    concentration_report,
    continuation,
    default_test_points,
    farfield_check,
    newton_solve,
    newton_solve_split,
    residual_certificate,
    solve_from_ansatz,
    truncation_probe,
)

EIGHT_PI = 4.0 * TWO_PI


def picard_iteration(green, Z, epsilon, grid_n, iters=200, tol=1e-12):
    """Small-data fixed point v <- A^{-1}(eps^2 a e^v) from zero."""
    grid = FDGrid(green.domain, grid_n)
    log_a = log_weight(green, Z, grid.points, strict=False)
    v = np.zeros(grid.m)
    for _ in range(iters):
        rhs = np.exp(2.0 * math.log(epsilon) + log_a + v)
        v_new = grid.lu.solve(rhs)
        if np.abs(v_new - v).max() < tol:
            return v_new, grid
        v = v_new
    return v, grid


class TestRawNewton:
    def test_resolved_single_bubble(self, disk_green):
        # eps = 0.1 at grid 512 satisfies the core-resolution rule for the
        # centered bubble (mu = 1/sqrt(8))
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.1)
        rep = newton_solve(disk_green, EMPTY_SOURCES, 0.1, ans, 512)
        assert rep.converged
        assert rep.newton_iters <= 12
        assert rep.residual_norm < 1e-9 * rep.residual_scale
        assert rep.total_mass == pytest.approx(EIGHT_PI, rel=0.01)
        assert np.hypot(*rep.peaks[0]) < 3 * rep.grid.h

    def test_under_resolved_refused(self, disk_green):
        Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
        r = 3**-0.5
        xi = Configuration([[r, 0.0], [-r, 0.0]])
        ans = build_ansatz(disk_green, Z, xi, 0.025)
        with pytest.raises(GridTooCoarse):
            newton_solve(disk_green, Z, 0.025, ans, 512)

    def test_minimal_branch_agrees_with_picard(self, disk_green):
        # zero initial data at tiny eps lands on the small solution, far from
        # the concentrating branch; Picard is the independent oracle
        rep = newton_solve(disk_green, EMPTY_SOURCES, 0.01, None, 128)
        v_picard, _ = picard_iteration(disk_green, EMPTY_SOURCES, 0.01, 128)
        assert rep.converged
        assert np.abs(rep.nodal_values - v_picard).max() < 1e-8
        assert rep.total_mass < 0.01 * EIGHT_PI

    def test_maximum_principle(self, disk_green):
        rep = newton_solve(disk_green, EMPTY_SOURCES, 0.05, None, 128)
        assert rep.nodal_values.min() >= -1e-12


class TestSplitNewton:
    def test_matches_raw_where_both_valid(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.1)
        raw = newton_solve(disk_green, EMPTY_SOURCES, 0.1, ans, 512)
        split = newton_solve_split(disk_green, EMPTY_SOURCES, 0.1, ans, 256)
        pts = np.array([[0.4, 0.2], [0.0, 0.5], [-0.6, 0.1], [0.2, -0.3]])
        assert np.abs(raw.field.value(pts) - split.field.value(pts)).max() < 2e-2
        # exact radial branch: total mass is 8 pi / (1 + s^2) with the
        # boundary-matched core scale s
        s = (math.sqrt(8) - math.sqrt(8 - 4 * 0.1**2)) / (2 * 0.1)
        exact_mass = EIGHT_PI / (1.0 + s * s)
        assert split.total_mass == pytest.approx(exact_mass, abs=2e-4)

    def test_correction_is_small_and_smooth(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.05)
        rep = newton_solve_split(disk_green, EMPTY_SOURCES, 0.05, ans, 128)
        w = rep.field.w_field.values
        assert np.abs(w).max() < 0.01

    def test_angular_symmetry_inherited(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.05)
        rep = newton_solve_split(disk_green, EMPTY_SOURCES, 0.05, ans, 256)
        th = np.linspace(0, 2 * math.pi, 64, endpoint=False)
        ring = 0.5 * np.stack([np.cos(th), np.sin(th)], axis=1)
        vals = rep.field.value(ring)
        assert vals.max() - vals.min() < 1e-6

    def test_mesh_convergence_of_mass(self, disk_green):
        Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
        r = 3**-0.5
        xi = Configuration([[r, 0.0], [-r, 0.0]])
        ans = build_ansatz(disk_green, Z, xi, 0.05)
        m1 = newton_solve_split(disk_green, Z, 0.05, ans, 128).total_mass
        m2 = newton_solve_split(disk_green, Z, 0.05, ans, 256).total_mass
        assert abs(m1 - m2) / abs(m2) < 0.01

    def test_auto_dispatch(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.1)
        assert solve_from_ansatz(disk_green, EMPTY_SOURCES, 0.1, ans, 512).method == "raw"
        assert solve_from_ansatz(disk_green, EMPTY_SOURCES, 0.1, ans, 128).method == "split"

    def test_star_domain_smoke(self, grid_green_star):
        xi = Configuration([[0.2, 0.1]])
        ans = build_ansatz(grid_green_star, EMPTY_SOURCES, xi, 0.1)
        rep = newton_solve_split(grid_green_star, EMPTY_SOURCES, 0.1, ans, 128)
        assert rep.converged
        assert rep.total_mass == pytest.approx(EIGHT_PI, rel=0.05)


class TestCertificates:
    def test_independent_residual(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.1)
        rep = newton_solve_split(disk_green, EMPTY_SOURCES, 0.1, ans, 128)
        assert residual_certificate(disk_green, EMPTY_SOURCES, rep) < 10.0 * 1e-9

    def test_independent_residual_raw(self, disk_green):
        rep = newton_solve(disk_green, EMPTY_SOURCES, 0.05, None, 128)
        assert residual_certificate(disk_green, EMPTY_SOURCES, rep) < 10.0 * 1e-9

    def test_truncation_probe_small(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        ans = build_ansatz(disk_green, EMPTY_SOURCES, xi, 0.1)
        rep = newton_solve_split(disk_green, EMPTY_SOURCES, 0.1, ans, 128)
        assert truncation_probe(disk_green, EMPTY_SOURCES, rep) < 1e-4


@pytest.fixture(scope="module")
def two_bubble_report(disk_green):
    Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
    r = 3**-0.5
    xi = Configuration([[r, 0.0], [-r, 0.0]])
    ans = build_ansatz(disk_green, Z, xi, 0.05)
    rep = newton_solve_split(disk_green, Z, 0.05, ans, 256)
    return Z, xi, rep


class TestObservables:

    def test_ball_masses_near_target(self, disk_green, two_bubble_report):
        Z, xi, rep = two_bubble_report
        summary = concentration_report(disk_green, Z, rep, xi, 0.19)
        for m in summary.ball_masses:
            assert m == pytest.approx(EIGHT_PI, rel=0.1)
        assert summary.total_mass == pytest.approx(
            math.fsum(summary.ball_masses) + summary.complement_mass, abs=1e-9
        )
        assert summary.complement_mass < 0.05 * EIGHT_PI

    def test_overlapping_balls_rejected(self, disk_green, two_bubble_report):
        Z, xi, rep = two_bubble_report
        with pytest.raises(OverlappingBalls):
            concentration_report(disk_green, Z, rep, xi, 0.6)

    def test_farfield_deviation(self, disk_green, two_bubble_report):
        Z, xi, rep = two_bubble_report
        pts = default_test_points(disk_green, Z, xi, 0.57)
        assert len(pts) >= 8
        dev = farfield_check(disk_green, Z, rep, xi, pts, 0.57)
        assert dev < 0.2

    def test_test_point_separation_enforced(self, disk_green, two_bubble_report):
        Z, xi, rep = two_bubble_report
        with pytest.raises(FarfieldPointTooClose):
            farfield_check(disk_green, Z, rep, xi, [xi.xs[0] + [0.01, 0.0]], 0.57)

    def test_peaks_near_predicted_points(self, disk_green, two_bubble_report):
        Z, xi, rep = two_bubble_report
        peaks = sorted(map(tuple, rep.peaks))
        pred = sorted(map(tuple, xi.xs))
        assert np.abs(np.array(peaks) - np.array(pred)).max() < 5e-3


class TestContinuation:
    def test_mass_and_farfield_trends(self, disk_green):
        Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
        r = 3**-0.5
        xi = Configuration([[r, 0.0], [-r, 0.0]])
        reps = continuation(disk_green, Z, xi, [0.1, 0.05], 256, method="split")
        assert all(rep.converged for rep in reps)
        errs = [
            max(abs(m - EIGHT_PI) for (_, _, m) in rep.ball_masses) for rep in reps
        ]
        assert errs[1] < errs[0]
        assert reps[1].farfield_deviation < reps[0].farfield_deviation
        assert reps[1].total_mass == pytest.approx(2 * EIGHT_PI, rel=0.02)

    def test_epsilon_ladder_validation(self, disk_green):
        Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
        xi = Configuration([[0.5, 0.0], [-0.5, 0.0]])
        with pytest.raises(ValueError):
            continuation(disk_green, Z, xi, [0.1, 0.2], 128)
        with pytest.raises(ValueError):
            continuation(disk_green, Z, xi, [0.1, 0.04], 128)

    def test_recentering_is_noop_for_static_peaks(self, disk_green):
        xi = Configuration([[0.0, 0.0]])
        reps = continuation(
            disk_green, EMPTY_SOURCES, xi, [0.1, 0.05], 128, method="split"
        )
        for rep in reps:
            assert np.hypot(*rep.peaks[0]) < 1e-10


def test_overflow_in_initial_field(disk_green):
    from multibubble.errors import OverflowInExp

    with pytest.raises(OverflowInExp):
        newton_solve(
            disk_green, EMPTY_SOURCES, 0.1, lambda pts: np.full(len(pts), 2000.0), 64
        )


def test_raw_continuation_smoke(disk_green):
    # both rungs resolved at grid 256 (eps*mu/8 >= h), exercising the
    # warm-started raw ladder
    xi = Configuration([[0.0, 0.0]])
    reps = continuation(disk_green, EMPTY_SOURCES, xi, [0.4, 0.2], 256, method="raw")
    assert all(rep.converged for rep in reps)
    assert all(rep.method == "raw" for rep in reps)
    assert reps[1].total_mass == pytest.approx(EIGHT_PI, rel=0.05)


def test_total_mass_error_monotone(disk_green):
    Z = SingularSet(points=((0.0, 0.0),), weights=(1.5,))
    r = 3**-0.5
    xi = Configuration([[r, 0.0], [-r, 0.0]])
    reps = continuation(disk_green, Z, xi, [0.1, 0.05], 256, method="split")
    errs = [abs(rep.total_mass - 2 * EIGHT_PI) for rep in reps]
    assert errs[1] < errs[0]
    # complement mass (outside the fixed balls) also shrinks with eps
    complements = [
        rep.total_mass - sum(m for (_, _, m) in rep.ball_masses) for rep in reps
    ]
    assert complements[1] < complements[0]
    # observed peaks approach the predicted configuration
    def peak_dev(rep):
        peaks = np.array(sorted(map(tuple, rep.peaks)))
        pred = np.array(sorted(map(tuple, xi.xs)))
        return np.abs(peaks - pred).max()

    assert peak_dev(reps[1]) <= peak_dev(reps[0]) + 1e-12


def test_two_source_pipeline(disk_green):
    from multibubble.search import minimize_in_class, saddle_refine, validate_splitting

    Z = SingularSet(points=((-0.35, 0.0), (0.35, 0.0)), weights=(0.6, 0.6))
    plan = validate_splitting(2, Z, disk_green.domain)
    assert plan.counts == {0: 1, 1: 1}
    km = minimize_in_class(plan, Z, disk_green)
    cp = saddle_refine(km.configuration, Z, disk_green, hess_step=1e-4 * plan.delta)
    assert cp.converged and cp.grad_norm < 1e-7
    reps = continuation(disk_green, Z, cp.xi_star, [0.1, 0.05], 256, method="split")
    for rep in reps:
        assert rep.converged
        for (_, _, m) in rep.ball_masses:
            assert m == pytest.approx(EIGHT_PI, rel=0.05)
    assert reps[1].farfield_deviation < reps[0].farfield_deviation
