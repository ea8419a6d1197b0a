"""Experiment driver tests.

Oracles: closed-form point asymptotics for the counterexample datum
(constants e^{-1} and e^{1 - sqrt(3)} entered independently), exactness
of the full pipeline on constant data, and report invariants.
"""

import numpy as np
import pytest

from disklayer.experiments import (ConvergenceReport, GapReport,
                                   convergence_study, counterexample_datum,
                                   counterexample_gap, counterexample_solve,
                                   error_norm, milne_point_asymptotics,
                                   run_single_epsilon, study_datum_g,
                                   study_datum_h)


class TestPointAsymptotics:
    def test_closed_form_constants(self):
        # u(n*eps) = (1 - e^{-n}) ubar(0) + e^{-n} G(n*eps-angle datum)
        # with the datum read at phi = 0: G(0) = e^{-1} + 2
        u, U = milne_point_asymptotics(1.0, 1e-9, 2.0, 2.0)
        g0 = np.exp(-1.0) + 2.0  # datum angle n*eps ~ 0 to O(eps^2)
        assert u == pytest.approx((1 - np.exp(-1.0)) * 2.0
                                  + np.exp(-1.0) * g0, abs=1e-12)
        w = np.exp(1.0 - np.sqrt(3.0))
        assert U == pytest.approx((1 - w) * 2.0 + w * g0, abs=1e-12)
        # independently tabulated weights
        assert np.exp(-1.0) == pytest.approx(0.36787944117144233, abs=1e-15)
        assert w == pytest.approx(0.48092170020263207, abs=1e-12)

    def test_eps_rotates_datum_angle(self):
        eps = 0.02
        u0, U0 = milne_point_asymptotics(1.0, 1e-9, 2.0, 2.0)
        u, U = milne_point_asymptotics(1.0, eps, 2.0, 2.0)
        assert u == pytest.approx(
            (1 - np.exp(-1)) * 2 + np.exp(-1) * counterexample_datum(eps),
            abs=1e-12)
        w = np.exp(1 - np.sqrt(3.0))
        assert U == pytest.approx(
            (1 - w) * 2 + w * counterexample_datum(np.sqrt(3.0) * eps),
            abs=1e-12)
        assert u < u0 and U < U0  # cos decreases away from 0

    def test_limits(self):
        # n -> infinity: both weights die, both limits are ubar(0)
        u, U = milne_point_asymptotics(500.0, 1e-5, 2.1, 1.9)
        assert u == pytest.approx(2.1, abs=1e-12)
        assert U == pytest.approx(1.9, abs=1e-12)

    def test_gap_persists_as_eps_to_zero(self):
        # the two predictions stay apart: datum angles converge but the
        # exponential weights differ by e^{-1} - e^{1 - sqrt(3)}
        for eps in (0.04, 0.02, 0.01, 1e-6):
            u, U = milne_point_asymptotics(1.0, eps, 2.0, 2.0)
            assert abs(u - U) > 0.02

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            milne_point_asymptotics(0.0, 0.01, 2.0, 2.0)
        with pytest.raises(ValueError):
            milne_point_asymptotics(-1.0, 0.01, 2.0, 2.0)


class TestCounterexample:
    def test_datum_shape(self):
        ph = np.linspace(-np.pi, np.pi, 9)
        assert np.allclose(counterexample_datum(ph),
                           np.exp(-1.0) * np.cos(ph) + 2.0)

    def test_solver_matches_predictions(self):
        eps = 0.02
        u_pt, U_pt, sol_c, sol_g = counterexample_solve(eps, n_phi=64)
        pred_u, pred_U = milne_point_asymptotics(
            1.0, eps, float(sol_c.fbar[0]), float(sol_g.fbar[0]))
        assert abs(u_pt - pred_u) < 0.05
        assert abs(U_pt - pred_U) < 0.05

    def test_gap_report(self):
        rep = counterexample_gap([0.04, 0.02], n_phi=64)
        assert isinstance(rep, GapReport)
        assert len(rep.rows) == 2
        for row in rep.rows:
            assert row["gap"] >= 0.02
            assert row["n"] == 1.0

    def test_gap_decays_for_deep_points(self):
        # beyond the crossover both weights die and the predictions mix
        # toward the shared far field, so the gap decays in n
        gaps = []
        for n in (4.0, 8.0, 16.0):
            u, U = milne_point_asymptotics(n, 0.01, 2.0, 2.0)
            gaps.append(abs(u - U))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_gap_report_invariants(self):
        with pytest.raises(ValueError):
            GapReport([{"epsilon": 0.1, "n": -1.0, "u_classical": 1.0,
                        "u_geometric": 1.0, "pred_classical": 1.0,
                        "pred_geometric": 1.0, "gap": 0.0}])


class TestErrorNorm:
    def test_constant_data_machine_zero(self):
        g = lambda t, th, ph: np.full(np.broadcast(th, ph).shape, 2.0)
        h = lambda x, w: np.full(np.asarray(x).shape[:-1], 2.0)
        fld, bundle, grid_id = run_single_epsilon(
            0.2, "geometric", 0, g, h, T=0.2, n_phi=16, d_eta=0.5, d_tau=0.5)
        assert error_norm(fld, bundle) < 1e-8
        assert grid_id.startswith("nr")

    def test_anchor_mismatch_is_configuration_error(self):
        from disklayer.core import AngularGrid, SpaceTimeGrid
        from disklayer.experiments import _check_anchor
        from disklayer.layers import build_expansion

        g = lambda t, th, ph: np.full(np.broadcast(th, ph).shape, 2.0)
        h = lambda x, w: np.full(np.asarray(x).shape[:-1], 2.0)
        fld, bundle, _ = run_single_epsilon(
            0.2, "geometric", 0, g, h, T=0.2, n_phi=16, d_eta=0.5, d_tau=0.5)
        # a grid missing the mu anchors must be rejected, not silently used
        from disklayer.core import KineticField
        bad_grid = SpaceTimeGrid(np.linspace(0, 1, 7), fld.grid.theta,
                                 fld.grid.time, check_ratios=False)
        bad = KineticField(bad_grid, fld.angular,
                           np.full((fld.grid.time.size, 7,
                                    fld.grid.theta.size,
                                    fld.angular.n_phi), 2.0),
                           rotation_invariant=fld.rotation_invariant)
        with pytest.raises(ValueError):
            error_norm(bad, bundle)


class TestConvergenceStudy:
    def test_report_invariants(self):
        with pytest.raises(ValueError):
            ConvergenceReport([
                {"epsilon": 0.1, "kind": "geometric", "order": 0,
                 "error_linf": 0.1, "grid_id": "a"},
                {"epsilon": 0.2, "kind": "geometric", "order": 0,
                 "error_linf": 0.2, "grid_id": "b"}])  # eps must decrease
        with pytest.raises(ValueError):
            ConvergenceReport([
                {"epsilon": 0.1, "kind": "geometric", "order": 0,
                 "error_linf": -0.1, "grid_id": "a"}])

    def test_constant_data_study(self):
        g = lambda t, th, ph: np.full(np.broadcast(th, ph).shape, 2.0)
        h = lambda x, w: np.full(np.asarray(x).shape[:-1], 2.0)
        rep = convergence_study([0.2], "geometric", order=0, g=g, h=h,
                                T=0.2, n_phi=16, d_eta=0.5, d_tau=0.5)
        assert rep.rows[0]["error_linf"] < 1e-8
        assert rep.rows[0]["kind"] == "geometric"

    def test_study_data_shapes(self):
        t = np.array([0.0, 1.0])
        assert np.allclose(study_datum_g(t, 0.0, 0.0),
                           t * t * np.exp(-t))
        x = np.zeros((3, 2))
        w = np.zeros((3, 2))
        assert np.allclose(study_datum_h(x, w), 0.0)
