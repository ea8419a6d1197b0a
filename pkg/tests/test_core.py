"""Geometry, quadrature, and grid container tests.

The exit-time closed form is checked against an independent bisection
oracle on |x - eps*s*w| - 1.
"""

import numpy as np
import pytest

from disklayer.core import (AngularGrid, KineticField, SpaceTimeGrid,
                            classify_boundary, exit_time, from_layer_frame,
                            graded_nodes, make_radial_grid, make_time_grid,
                            to_layer_frame, velocity_average, velocity_from_xi,
                            wrap_angle, xi_from_velocity)


def exit_time_bisect(x, w, eps, tol=1e-13):
    """Oracle: bisection on the radius along the backward ray."""
    def radius(s):
        p = np.asarray(x) - eps * s * np.asarray(w)
        return np.hypot(p[0], p[1]) - 1.0

    if radius(0.0) >= -1e-14 and radius(1e-12) >= radius(0.0):
        return 0.0
    hi = 1.0
    while radius(hi) < 0:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if radius(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestExitTime:
    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(7)
        eps = 0.13
        for _ in range(50):
            r = rng.uniform(0, 0.999)
            th = rng.uniform(-np.pi, np.pi)
            x = np.array([r * np.cos(th), r * np.sin(th)])
            w = velocity_from_xi(rng.uniform(-np.pi, np.pi))
            s = exit_time(x, w, eps)
            s_ref = exit_time_bisect(x, w, eps)
            assert abs(s - s_ref) < 1e-9 * (1 + s_ref)

    def test_center_is_chord_of_length_one(self):
        s = exit_time(np.zeros(2), velocity_from_xi(0.7), 0.1)
        assert abs(s - 1.0 / 0.1) < 1e-12

    def test_boundary_outflow_is_zero(self):
        x = np.array([1.0, 0.0])
        w = np.array([1.0, 0.0])  # backward ray x - eps*s*w enters the disk
        assert exit_time(x, w, 0.1) == pytest.approx(2.0 / 0.1)
        assert exit_time(x, -w, 0.1) == 0.0

    def test_outside_disk_raises(self):
        with pytest.raises(ValueError):
            exit_time(np.array([1.2, 0.0]), np.array([0.0, 1.0]), 0.1)

    def test_broadcasts(self):
        x = np.zeros((4, 2))
        w = velocity_from_xi(np.linspace(-1, 1, 4))
        assert exit_time(x, w, 0.2).shape == (4,)


class TestFrames:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        eps = 0.07
        for _ in range(20):
            x = rng.uniform(-0.6, 0.6, 2)
            xi = rng.uniform(-np.pi, np.pi)
            eta, theta, phi = to_layer_frame(x, xi, eps)
            x2, xi2 = from_layer_frame(eta, theta, phi, eps)
            assert np.allclose(x, x2, atol=1e-12)
            assert abs(wrap_angle(xi - xi2)) < 1e-12

    def test_inflow_is_sin_phi_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            th = rng.uniform(-np.pi, np.pi)
            xi = rng.uniform(-np.pi, np.pi)
            x0 = np.array([np.cos(th), np.sin(th)])
            w = velocity_from_xi(xi)
            phi = wrap_angle(th + xi)
            if abs(np.sin(phi)) < 1e-3:
                continue
            expected = "inflow" if np.sin(phi) > 0 else "outflow"
            assert classify_boundary(x0, w) == expected

    def test_velocity_round_trip(self):
        xi = np.linspace(-np.pi, np.pi, 9, endpoint=False)
        assert np.allclose(xi_from_velocity(velocity_from_xi(xi)),
                           wrap_angle(xi), atol=1e-12)

    def test_classify_requires_boundary_point(self):
        with pytest.raises(ValueError):
            classify_boundary(np.array([0.5, 0.0]), np.array([0.0, 1.0]))


class TestAngularGrid:
    def test_nodes_avoid_axes(self):
        for n in (4, 8, 64, 128):
            g = AngularGrid(n)
            assert np.min(np.abs(np.sin(g.nodes))) > 1e-8
            assert np.min(np.abs(np.cos(g.nodes))) > 1e-8

    def test_weights_sum_to_two_pi(self):
        g = AngularGrid(48)
        assert abs(g.weights.sum() - 2 * np.pi) < 1e-12

    def test_rejects_bad_counts(self):
        for n in (0, -4, 6, 30):
            with pytest.raises(ValueError):
                AngularGrid(n)

    def test_average_of_cos_is_zero(self):
        g = AngularGrid(32)
        assert abs(velocity_average(np.cos(g.nodes), g)) < 1e-14
        assert abs(velocity_average(np.ones(g.n_phi), g) - 1.0) < 1e-14

    def test_average_rejects_mismatched_slice(self):
        g = AngularGrid(32)
        with pytest.raises(ValueError):
            velocity_average(np.ones(31), g)


class TestGrids:
    def test_graded_nodes_include_anchors(self):
        nodes = graded_nodes(1.0, 0.01, 0.2, anchors=(0.05, 0.3))
        for a in (0.0, 0.05, 0.3, 1.0):
            assert np.min(np.abs(nodes - a)) < 1e-12
        assert np.all(np.diff(nodes) > 0)

    def test_graded_nodes_ratio_bounded(self):
        nodes = graded_nodes(1.0, 0.003, 0.1)
        h = np.diff(nodes)
        assert np.max(h[1:] / h[:-1]) <= 2.0 + 1e-9

    def test_radial_and_time_grids(self):
        eps = 0.1
        r = make_radial_grid(eps, mu_anchors=(0.5 * eps, 2 * eps))
        assert r[0] == 0.0 and abs(r[-1] - 1.0) < 1e-12
        assert np.min(np.abs(r - (1 - 0.5 * eps))) < 1e-12
        t = make_time_grid(eps, 1.0, t_anchors=(eps ** 2,))
        assert t[0] == 0.0 and abs(t[-1] - 1.0) < 1e-12
        assert t[1] - t[0] <= 0.25 * eps ** 2 + 1e-15

    def test_space_time_grid_validation(self):
        with pytest.raises(ValueError):
            SpaceTimeGrid(np.array([0.0, 0.5, 0.4]), np.array([0.0]),
                          np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            SpaceTimeGrid(np.array([0.0, 1.5]), np.array([0.0]),
                          np.array([0.0, 1.0]))
        with pytest.raises(ValueError):  # spacing ratio jump > 2
            SpaceTimeGrid(np.array([0.0, 0.01, 0.5, 1.0]), np.array([0.0]),
                          np.array([0.0, 1.0]))

    def test_kinetic_field_shape_validation(self):
        grid = SpaceTimeGrid(np.array([0.0, 0.5, 1.0]), np.array([0.0]),
                             np.array([0.0, 1.0]))
        ang = AngularGrid(8)
        with pytest.raises(ValueError):
            KineticField(grid, ang, np.zeros((2, 3, 1, 7)))
        with pytest.raises(ValueError):
            KineticField(grid, ang, np.full((2, 3, 1, 8), np.nan))
        KineticField(grid, ang, np.zeros((2, 3, 1, 8)))
