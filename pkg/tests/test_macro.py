"""Heat solver tests.

Oracles: steady harmonic states, separable decay modes with the Bessel
rate (j_{0,1}^2 obtained independently by bracketed root finding on
scipy.special.j0), and the discrete maximum principle.
"""

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import j0

from disklayer.core import SpaceTimeGrid
from disklayer.macro import (HeatProblem, ScalarFieldTime,
                             gradient_at_boundary, solve_heat_disk)


def make_grid(n_r=41, n_th=32, T=0.3, n_t=121):
    return SpaceTimeGrid(np.linspace(0, 1, n_r),
                         np.linspace(-np.pi, np.pi, n_th, endpoint=False),
                         np.linspace(0, T, n_t))


class TestHeatSolver:
    def test_constant_exact(self):
        grid = make_grid()
        prob = HeatProblem(initial=lambda x: np.full(x.shape[:-1], 4.2),
                           dirichlet=lambda t, th: np.full(np.shape(th), 4.2),
                           T=0.3)
        fld = solve_heat_disk(prob, grid)
        assert np.max(np.abs(fld.values - 4.2)) < 1e-10

    def test_harmonic_steady_state(self):
        # u = r cos(theta) is harmonic: it is a fixed point of the flow
        grid = make_grid(n_r=61, n_th=48)
        prob = HeatProblem(initial=lambda x: x[..., 0],
                           dirichlet=lambda t, th: np.cos(th), T=0.3)
        fld = solve_heat_disk(prob, grid)
        r = grid.radial[:, None]
        exact = r * np.cos(grid.theta)[None, :]
        assert np.max(np.abs(fld.values[-1] - exact)) < 2e-3

    def test_bessel_decay_rate(self):
        # radial mode J0(j01 r) decays like exp(-j01^2 t)
        j01 = brentq(j0, 2.0, 3.0)
        grid = SpaceTimeGrid(np.linspace(0, 1, 201), np.array([0.0]),
                             np.linspace(0, 0.1, 801))
        prob = HeatProblem(initial=lambda x: j0(j01 * np.hypot(x[..., 0],
                                                               x[..., 1])),
                           dirichlet=lambda t, th: np.zeros(np.shape(th)),
                           T=0.1)
        fld = solve_heat_disk(prob, grid)
        v0 = fld.values[:, 0, 0]
        k0, k1 = 240, 800
        rate = -np.log(v0[k1] / v0[k0]) / (grid.time[k1] - grid.time[k0])
        assert abs(rate - j01 ** 2) / j01 ** 2 < 0.02

    def test_maximum_principle_random(self):
        rng = np.random.default_rng(3)
        grid = make_grid(n_r=31, n_th=16, T=0.2, n_t=41)
        for _ in range(5):
            a, b, c = rng.uniform(-1, 1, 3)

            def init(x, a=a, b=b, c=c):
                return a + b * x[..., 0] + c * x[..., 0] * x[..., 1]

            def bc(t, th, a=a, b=b, c=c):
                x1, x2 = np.cos(th), np.sin(th)
                return a + b * x1 + c * x1 * x2

            prob = HeatProblem(initial=init, dirichlet=bc, T=0.2)
            fld = solve_heat_disk(prob, grid)
            lo = min(fld.values[0].min(),
                     min(bc(t, grid.theta).min() for t in grid.time))
            hi = max(fld.values[0].max(),
                     max(bc(t, grid.theta).max() for t in grid.time))
            assert fld.values.min() >= lo - 1e-8
            assert fld.values.max() <= hi + 1e-8

    def test_radial_fast_path_matches_polar(self):
        grid = make_grid(n_r=41, n_th=24, T=0.1, n_t=41)
        prob = HeatProblem(initial=lambda x: 1 - np.sum(x * x, axis=-1),
                           dirichlet=lambda t, th: np.zeros(np.shape(th)),
                           T=0.1)
        fld = solve_heat_disk(prob, grid)  # auto radial

        def init2(x):
            return (1 - np.sum(x * x, axis=-1)
                    + 1e-15 * np.cos(np.arctan2(x[..., 1], x[..., 0])))

        prob2 = HeatProblem(initial=lambda x: 1 - np.sum(x * x, axis=-1),
                            dirichlet=lambda t, th: 1e-15 * np.cos(th), T=0.1)
        fld2 = solve_heat_disk(prob2, grid)  # forced polar path
        assert np.max(np.abs(fld.values - fld2.values)) < 1e-8

    def test_compatibility_validation(self):
        prob = HeatProblem(initial=lambda x: np.zeros(x.shape[:-1]),
                           dirichlet=lambda t, th: np.ones(np.shape(th)),
                           T=0.1)
        with pytest.raises(ValueError):
            solve_heat_disk(prob, make_grid())

    def test_grid_must_span_unit_radius(self):
        grid = SpaceTimeGrid(np.linspace(0.1, 1.0, 10), np.array([0.0]),
                             np.linspace(0, 0.1, 5))
        prob = HeatProblem(initial=lambda x: np.zeros(x.shape[:-1]),
                           dirichlet=lambda t, th: np.zeros(np.shape(th)),
                           T=0.1)
        with pytest.raises(ValueError):
            solve_heat_disk(prob, grid)


class TestFieldInterpolation:
    def test_at_reproduces_nodes(self):
        grid = make_grid(n_r=21, n_th=16, T=0.1, n_t=11)
        vals = np.fromfunction(lambda k, i, m: k + 0.1 * i + 0.01 * m,
                               (11, 21, 16))
        fld = ScalarFieldTime(grid, vals)
        assert fld.at(grid.time[3], grid.radial[5],
                      grid.theta[7]) == pytest.approx(vals[3, 5, 7])

    def test_boundary_gradient_of_linear_function(self):
        # u = x1: grad = (1, 0) everywhere
        grid = make_grid(n_r=81, n_th=64, T=0.05, n_t=21)
        prob = HeatProblem(initial=lambda x: x[..., 0],
                           dirichlet=lambda t, th: np.cos(th), T=0.05)
        fld = solve_heat_disk(prob, grid)
        # the theta derivative differentiates the bilinear interpolant,
        # which is first order between nodes
        for th in (0.0, 1.1, -2.3):
            g1, g2 = gradient_at_boundary(fld, 0.0, th)
            assert abs(g1 - 1.0) < 3e-2
            assert abs(g2) < 3e-2
