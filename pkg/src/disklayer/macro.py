"""Heat equation on the unit disk for the interior expansion terms.

Solves d_t u - Lap(u) = 0 with Dirichlet data on r = 1 by implicit Euler
on a polar grid.  The Laplacian uses the conservative flux form
(1/r)(r u_r)_r + u_tt / r^2, which yields an M-matrix per step, so the
discrete maximum principle holds exactly.  A radially symmetric 1D fast
path is auto-selected for theta-independent data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import SpaceTimeGrid


@dataclass
class HeatProblem:
    """Interior heat problem: initial datum on the disk, Dirichlet datum on (t, theta)."""

    initial: Callable
    dirichlet: Callable
    T: float

    def validate_compatibility(self, theta_nodes, tol=1e-8):
        th = np.asarray(theta_nodes, dtype=float)
        x = np.stack([np.cos(th), np.sin(th)], axis=-1)
        init = np.asarray(self.initial(x), dtype=float)
        bdry = np.asarray(self.dirichlet(0.0, th), dtype=float)
        err = float(np.max(np.abs(init - bdry)))
        if err > tol:
            raise ValueError(
                f"corner compatibility initial(x0) = dirichlet(0, theta) violated by {err:.3e}"
            )


@dataclass
class ScalarFieldTime:
    """Sampled scalar field u[t_k, r_i, theta_m] on a SpaceTimeGrid."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        expected = (self.grid.time.size, self.grid.radial.size, self.grid.theta.size)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != grid {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values in ScalarFieldTime")

    def at(self, t, r, theta=0.0):
        """Trilinear interpolation (linear in t, r, theta; periodic theta)."""
        g = self.grid
        t = np.clip(t, g.time[0], g.time[-1])
        kt = np.clip(np.searchsorted(g.time, t) - 1, 0, g.time.size - 2)
        wt = (t - g.time[kt]) / (g.time[kt + 1] - g.time[kt])
        lo = self._space_interp(self.values[kt], r, theta)
        hi = self._space_interp(self.values[kt + 1], r, theta)
        return (1.0 - wt) * lo + wt * hi

    def _space_interp(self, plane, r, theta):
        g = self.grid
        r = np.clip(r, g.radial[0], g.radial[-1])
        ir = np.clip(np.searchsorted(g.radial, r) - 1, 0, g.radial.size - 2)
        wr = (r - g.radial[ir]) / (g.radial[ir + 1] - g.radial[ir])
        if g.theta.size == 1:
            return (1.0 - wr) * plane[ir, 0] + wr * plane[ir + 1, 0]
        n = g.theta.size
        d = 2.0 * np.pi / n
        pos = (np.asarray(theta) - g.theta[0]) / d
        j0 = np.mod(np.floor(pos).astype(int), n)
        j1 = np.mod(j0 + 1, n)
        wj = pos - np.floor(pos)
        v0 = (1.0 - wj) * plane[ir, j0] + wj * plane[ir, j1]
        v1 = (1.0 - wj) * plane[ir + 1, j0] + wj * plane[ir + 1, j1]
        return (1.0 - wr) * v0 + wr * v1


def _radial_operator(r):
    """Conservative radial Laplacian rows (1/r)(r u_r)_r on nonuniform nodes.

    Returns (sub, diag, sup) for interior nodes 1..n-2 plus the averaged
    center stencil at r_0 = 0; Dirichlet row at r = 1 is handled by caller.
    """
    n = r.size
    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)
    h = np.diff(r)
    # center: Lap u(0) = 4 (u(r1) - u(0)) / r1^2 (radially symmetric limit)
    sup[0] = 4.0 / (r[1] ** 2)
    diag[0] = -4.0 / (r[1] ** 2)
    for i in range(1, n - 1):
        hm, hp = h[i - 1], h[i]
        rm, rp = r[i] - 0.5 * hm, r[i] + 0.5 * hp
        vol = r[i] * 0.5 * (hm + hp)
        sub[i] = rm / (hm * vol)
        sup[i] = rp / (hp * vol)
        diag[i] = -(sub[i] + sup[i])
    return sub, diag, sup


def solve_heat_disk(problem: HeatProblem, grid: SpaceTimeGrid) -> ScalarFieldTime:
    """Implicit-Euler heat solve; 1D radial fast path for theta-independent data."""
    r = grid.radial
    th = grid.theta
    t = grid.time
    if r[0] != 0.0 or abs(r[-1] - 1.0) > 1e-12:
        raise ValueError("radial grid must run from 0 to 1 for the heat solve")
    problem.validate_compatibility(th)

    x = r[:, None, None] * np.stack(
        [np.cos(th), np.sin(th)], axis=-1)[None, :, :]
    u0 = np.asarray(problem.initial(x), dtype=float)
    u0 = np.broadcast_to(u0, (r.size, th.size)).copy()
    bvals = np.asarray([np.broadcast_to(problem.dirichlet(tk, th), th.shape)
                        for tk in t], dtype=float)

    radially_symmetric = (
        np.max(np.abs(u0 - u0[:, :1])) < 1e-14
        and np.max(np.abs(bvals - bvals[:, :1])) < 1e-14
    )
    if radially_symmetric:
        vals = _solve_radial(r, t, u0[:, 0], bvals[:, 0])
        return ScalarFieldTime(grid, np.repeat(vals[:, :, None], th.size, axis=2))
    return ScalarFieldTime(grid, _solve_polar(r, th, t, u0, bvals))


def _solve_radial(r, t, u0, bvals):
    n = r.size
    sub, diag, sup = _radial_operator(r)
    out = np.empty((t.size, n))
    out[0] = u0
    lus = {}
    u = u0.copy()
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        key = round(float(dt), 15)
        if key not in lus:
            A = sp.diags(
                [-dt * sub[1:], 1.0 - dt * diag, -dt * sup[:-1]], [-1, 0, 1],
                format="csc")
            A = A.tolil()
            A[n - 1, :] = 0.0
            A[n - 1, n - 1] = 1.0
            lus[key] = splu(A.tocsc())
        rhs = u.copy()
        rhs[-1] = bvals[k]
        u = lus[key].solve(rhs)
        out[k] = u
    return out


def _solve_polar(r, th, t, u0, bvals):
    """Unknowns: center node + rings 1..n_r-2; Dirichlet ring n_r-1 via rhs."""
    n_r, n_th = r.size, th.size
    if n_th < 3:
        raise ValueError("polar heat solve needs at least 3 theta nodes")
    d_th = 2.0 * np.pi / n_th
    sub, diag, sup = _radial_operator(r)

    def idx(i, j):
        return 1 + (i - 1) * n_th + (j % n_th)  # node 0 is the center

    n_unknown = 1 + (n_r - 2) * n_th
    rows, cols, data = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        data.append(v)

    # center row: couples to the mean over the first ring
    add(0, 0, diag[0])
    for j in range(n_th):
        add(0, idx(1, j), sup[0] / n_th)
    # interior rings (coupling to the boundary ring goes to the rhs)
    for i in range(1, n_r - 1):
        ang = 1.0 / (r[i] ** 2 * d_th ** 2)
        for j in range(n_th):
            me = idx(i, j)
            add(me, me, diag[i] - 2.0 * ang)
            if i + 1 <= n_r - 2:
                add(me, idx(i + 1, j), sup[i])
            below = 0 if i == 1 else idx(i - 1, j)
            add(me, below, sub[i])
            add(me, idx(i, j + 1), ang)
            add(me, idx(i, j - 1), ang)
    L = sp.csr_matrix((data, (rows, cols)), shape=(n_unknown, n_unknown))
    eye = sp.identity(n_unknown, format="csr")

    out = np.empty((t.size, n_r, n_th))
    out[0] = u0
    u = np.concatenate([[u0[0, 0]], u0[1:-1].ravel()])
    bc_rows = np.array([idx(n_r - 2, j) for j in range(n_th)])
    lus = {}
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        key = round(float(dt), 15)
        if key not in lus:
            lus[key] = splu((eye - dt * L).tocsc())
        rhs = u.copy()
        rhs[bc_rows] += dt * sup[n_r - 2] * bvals[k]
        u = lus[key].solve(rhs)
        out[k, 0, :] = u[0]
        out[k, 1:-1, :] = u[1:].reshape(n_r - 2, n_th)
        out[k, -1, :] = bvals[k]
    return out


def gradient_at_boundary(field: ScalarFieldTime, t, theta):
    """One-sided second-order (d_r u, d_theta u / r) at r = 1, as Cartesian pair.

    Returns (g1, g2) with grad u = g_r e_r + g_t e_theta expressed in
    Cartesian components, for contraction with a velocity w.
    """
    g = field.grid
    r = g.radial
    if not (g.time[0] - 1e-12 <= t <= g.time[-1] + 1e-12):
        raise ValueError("t outside grid range")
    r2, r1, r0 = r[-3], r[-2], r[-1]
    u0 = field.at(t, r0, theta)
    u1 = field.at(t, r1, theta)
    u2 = field.at(t, r2, theta)
    h1, h2 = r0 - r1, r0 - r2
    # second-order one-sided difference on nonuniform nodes
    du_dr = (u0 * (h1 + h2) / (h1 * h2)
             - u1 * h2 / (h1 * (h2 - h1))
             + u2 * h1 / (h2 * (h2 - h1)))
    if g.theta.size == 1:
        du_dth = np.zeros_like(np.asarray(theta, dtype=float))
    else:
        d = 1e-4
        du_dth = (field.at(t, r0, np.asarray(theta) + d)
                  - field.at(t, r0, np.asarray(theta) - d)) / (2 * d)
    ct, st = np.cos(theta), np.sin(theta)
    g1 = du_dr * ct - du_dth * st
    g2 = du_dr * st + du_dth * ct
    return g1, g2
