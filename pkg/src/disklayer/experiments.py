"""Convergence study over eps (geometric vs classical expansions) and the
counterexample comparing classical and eps-modified Milne point values
against their closed-form asymptotics.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np

from .core import (AngularGrid, KineticField, SpaceTimeGrid, graded_nodes,
                   make_radial_grid, make_time_grid, validate_epsilon,
                   velocity_from_xi)
from .layers import ExpansionBundle, build_expansion, evaluate_expansion
from .milne import MilneProblem, point_value, solve_milne
from .transport import TransportProblem, solve_transport

MU_ANCHOR_FACTORS = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
T_ANCHOR_FACTORS = np.array([0.5, 1.0, 2.0, 4.0, 8.0])


@dataclass
class ConvergenceReport:
    """Rows of (eps, kind, order, error_linf, grid_id); eps strictly decreasing."""

    rows: list

    def __post_init__(self):
        eps_seq = [r["epsilon"] for r in self.rows]
        if any(b >= a for a, b in zip(eps_seq, eps_seq[1:])):
            raise ValueError("rows must have strictly decreasing epsilon")
        if any(r["error_linf"] < 0 for r in self.rows):
            raise ValueError("errors must be nonnegative")


@dataclass
class GapReport:
    """Rows of (eps, n, u_classical, u_geometric, predictions, gap)."""

    rows: list

    def __post_init__(self):
        for r in self.rows:
            if r["n"] <= 0:
                raise ValueError("n must be positive")
            if not (np.isfinite(r["pred_classical"])
                    and np.isfinite(r["pred_geometric"])):
                raise ValueError("predictions must be finite")


def _check_anchor(nodes, value, label):
    if np.min(np.abs(np.asarray(nodes) - value)) > 1e-10:
        raise ValueError(
            f"evaluation grid is missing the required {label} anchor {value:g}")


def error_norm(u_field: KineticField, bundle: ExpansionBundle) -> float:
    """Sup over the field's stored nodes of |u - evaluate_expansion|.

    The evaluation grid must contain the near-boundary radii mu = eps *
    {0.5, 1, 2, 4, 8} and near-initial times t = eps^2 * {0.5, 1, 2, 4, 8}
    (those below the horizon), else a configuration error is raised.
    """
    eps = bundle.eps
    grid = u_field.grid
    for a in MU_ANCHOR_FACTORS * eps:
        if a < 1.0:
            _check_anchor(1.0 - grid.radial, a, "radial mu")
    for a in T_ANCHOR_FACTORS * eps * eps:
        if a < grid.time[-1]:
            _check_anchor(grid.time, a, "time")

    r = grid.radial
    err = 0.0
    if u_field.rotation_invariant:
        ph = u_field.angular.nodes
        X = np.stack([np.broadcast_to(r[:, None], (r.size, ph.size)),
                      np.zeros((r.size, ph.size))], axis=-1)
        W = np.broadcast_to(velocity_from_xi(ph)[None], (r.size, ph.size, 2))
        for k, tk in enumerate(grid.time):
            ev = evaluate_expansion(bundle, tk, X, W)
            err = max(err, float(np.max(np.abs(u_field.values[k, :, 0, :] - ev))))
        return err
    th = grid.theta
    xi = u_field.angular.nodes
    R, TH, XI = np.meshgrid(r, th, xi, indexing="ij")
    X = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1)
    W = velocity_from_xi(XI)
    for k, tk in enumerate(grid.time):
        ev = evaluate_expansion(bundle, tk, X, W)
        err = max(err, float(np.max(np.abs(u_field.values[k] - ev))))
    return err


def _default_n_phi(eps):
    """Angular resolution scaled so the grazing transition stays resolved."""
    return int(np.clip(4 * round(16 / eps / 4), 64, 256))


def study_datum_g(t, theta, phi):
    """Convergence-study inflow datum g = t^2 e^{-t} cos(phi)."""
    t = np.asarray(t, dtype=float)
    return t * t * np.exp(-t) * np.cos(phi)


def study_datum_h(x, w):
    """Convergence-study initial datum h = 0 (improved-compatible)."""
    return np.zeros(np.asarray(x).shape[:-1])


def run_single_epsilon(eps, kind, order, g=study_datum_g, h=study_datum_h,
                       T=1.0, n_phi=None, d_eta=0.25, d_tau=0.25):
    """Solve the transport problem and build the expansion for one eps.

    Returns (field, bundle, grid_id).  The grids scale with eps: radial
    boundary spacing ~ eps * d_eta with mu anchors, time spacing near 0
    ~ eps^2 * d_tau with t anchors.
    """
    eps = validate_epsilon(eps)
    n_phi = n_phi or _default_n_phi(eps)
    prob = TransportProblem(eps, g=g, h=h, T=T)
    prob.validate_improved_compatibility()
    mu_anchors = tuple(a for a in eps * MU_ANCHOR_FACTORS if a < 1.0)
    t_anchors = tuple(a for a in eps * eps * T_ANCHOR_FACTORS if a < T)
    r = make_radial_grid(eps, d_eta, 0.05, mu_anchors=mu_anchors)
    tg = make_time_grid(eps, T, d_tau, 0.02, t_anchors=t_anchors)
    ang = AngularGrid(n_phi)
    keep = np.zeros(tg.size, dtype=bool)
    keep[0] = keep[-1] = True
    for ta in list(t_anchors) + list(np.linspace(T / 20, T, 20)):
        keep[np.argmin(np.abs(tg - ta))] = True
    grid = SpaceTimeGrid(r, np.array([0.0]), tg)
    fld, report = solve_transport(prob, grid, ang, store_times=keep)

    eta_all = (1.0 - r[::-1]) / eps
    eta_max = min(40.0, 0.75 / eps) if kind == "geometric" else 40.0
    eta = eta_all[eta_all <= eta_max + 1e-12]
    if eta[-1] < eta_max - 1e-12:
        eta = np.append(eta, eta_max)
    bundle = build_expansion(eps, g, h, kind=kind, order=order, T=T,
                             angular=ang, eta_grid=eta)
    grid_id = f"nr{r.size}_nphi{n_phi}_nt{tg.size}"
    return fld, bundle, grid_id


def convergence_study(eps_list, kind, order=1, **kwargs) -> ConvergenceReport:
    """Error of the order-`order` expansion vs the kinetic solution per eps."""
    rows = []
    for eps in eps_list:
        try:
            fld, bundle, grid_id = run_single_epsilon(eps, kind, order, **kwargs)
            err = error_norm(fld, bundle)
        except Exception as exc:
            raise RuntimeError(
                f"convergence study failed at eps={eps} (kind={kind}, "
                f"order={order}): {exc}") from exc
        rows.append({"epsilon": float(eps), "kind": kind, "order": int(order),
                     "error_linf": float(err), "grid_id": grid_id})
    return ConvergenceReport(rows)


def counterexample_datum(phi):
    """Frozen t = 1 datum G(phi) = e^{-1} cos(phi) + 2."""
    return np.exp(-1.0) * np.cos(phi) + 2.0


def milne_point_asymptotics(n, eps, ubar0, Ubar0):
    """Closed-form predictions for u(n eps, eps) and U(n eps, eps)."""
    if n <= 0:
        raise ValueError("n must be positive")
    eps = validate_epsilon(eps)
    w_c = np.exp(-float(n))
    pred_u = (1.0 - w_c) * ubar0 + w_c * counterexample_datum(eps)
    root = np.sqrt(1.0 + 2.0 * float(n))
    w_g = np.exp(1.0 - root)
    pred_U = (1.0 - w_g) * Ubar0 + w_g * counterexample_datum(root * eps)
    return float(pred_u), float(pred_U)


def _counterexample_grid(n, eps, eta_max):
    """Graded eta grid with >= 8 nodes in [0, n eps] and the anchor n eps."""
    fine = n * eps / 8.0
    return graded_nodes(eta_max, fine, 0.5, anchors=(n * eps,))


def counterexample_solve(eps, n=1.0, n_phi=128, tol=1e-9):
    """Solve classical (u) and geometric (U) Milne problems for datum G.

    Returns (u_point, U_point, sol_classical, sol_geometric) with the point
    values read off at (eta, phi) = (n eps, eps) along the exact backward
    characteristic of each solution.
    """
    eps = validate_epsilon(eps)
    ang = AngularGrid(n_phi)
    out = {}
    for kind, force in (("classical", "none"), ("geometric", "geometric")):
        eta_max = 40.0 if kind == "classical" else min(40.0, 0.75 / eps)
        grid = _counterexample_grid(n, eps, eta_max)
        prob = MilneProblem(eps=eps, force_kind=force, H=counterexample_datum,
                            eta_grid=grid, angular=ang, eta_max=eta_max)
        sol = solve_milne(prob, tol=tol)
        out[kind] = (point_value(sol, n * eps, eps), sol)
    u_point, sol_c = out["classical"]
    U_point, sol_g = out["geometric"]
    return float(u_point), float(U_point), sol_c, sol_g


def counterexample_gap(eps_list, n=1.0, n_phi=128) -> GapReport:
    """Gap |U - u| at (n eps, eps) with closed-form predictions per eps."""
    rows = []
    for eps in eps_list:
        u_pt, U_pt, sol_c, sol_g = counterexample_solve(eps, n=n, n_phi=n_phi)
        ubar0 = float(sol_c.fbar[0])
        Ubar0 = float(sol_g.fbar[0])
        pred_u, pred_U = milne_point_asymptotics(n, eps, ubar0, Ubar0)
        rows.append({"epsilon": float(eps), "n": float(n),
                     "u_classical": u_pt, "u_geometric": U_pt,
                     "pred_classical": pred_u, "pred_geometric": pred_U,
                     "gap": abs(U_pt - u_pt)})
    return GapReport(rows)
