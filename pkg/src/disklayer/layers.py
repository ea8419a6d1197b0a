"""Asymptotic expansion machinery: initial layer, boundary layer (geometric
and classical variants), interior heat solves, and order-0/1 assembly.

The expansion evaluated at (t, x, w) is

    interior(t, x)  +  initial_layer(t/eps^2, x, w)  +  boundary_layer(t, eta, theta, phi)

plus eps times the analogous order-1 triple when order = 1.  The boundary
layer comes from half-space Milne solves (one per (t, theta) sample) with
the cutoff psi0 applied, the interior from heat solves fed by the layer
far fields, and the initial layer from closed-form / quadrature formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (AngularGrid, SpaceTimeGrid, graded_nodes, velocity_from_xi,
                   wrap_angle)
from .macro import (HeatProblem, ScalarFieldTime, gradient_at_boundary,
                    solve_heat_disk)
from .milne import MilneProblem, cutoff_psi, cutoff_psi0, solve_milne

_FD_STEP = 1e-5


def _grad_fd(fn, x, step=_FD_STEP):
    """Central-difference Cartesian gradient of fn(x) on the closed disk.

    Stencil centers within ``step`` of the boundary are pulled inward so
    all evaluation points stay inside the disk.
    """
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    scale = np.where(r > 1.0 - step, (1.0 - step) / np.maximum(r, step), 1.0)
    xc = x * scale
    out = []
    for k in range(2):
        d = np.zeros_like(xc)
        d[..., k] = step
        out.append((np.asarray(fn(xc + d), dtype=float)
                    - np.asarray(fn(xc - d), dtype=float)) / (2 * step))
    return out[0], out[1]


def _field_gradient(fld: ScalarFieldTime, t, x, step=1e-4):
    """Cartesian gradient of a polar ScalarFieldTime at points x (..., 2)."""
    def ev(p):
        r = np.minimum(np.sqrt(np.sum(p * p, axis=-1)), 1.0)
        th = np.arctan2(p[..., 1], p[..., 0])
        return fld.at(t, r, th)

    return _grad_fd(ev, x, step)


def _interp_weights_1d(nodes, q):
    i0 = np.clip(np.searchsorted(nodes, q) - 1, 0, nodes.size - 2)
    w = (q - nodes[i0]) / (nodes[i0 + 1] - nodes[i0])
    return i0, np.clip(w, 0.0, 1.0)


def _periodic_weights(nodes, q):
    """Linear interpolation weights on a uniform periodic angular grid."""
    n = nodes.size
    if n == 1:
        z = np.zeros(np.shape(q), dtype=int)
        return z, z, np.zeros(np.shape(q))
    d = 2.0 * np.pi / n
    pos = (np.asarray(q) - nodes[0]) / d
    j0 = np.floor(pos).astype(int)
    return np.mod(j0, n), np.mod(j0 + 1, n), pos - j0


@dataclass
class InitialLayer0:
    """Closed-form zeroth order initial layer e^{-tau} (h(x, w) - hbar(x))."""

    h: Callable
    angular: AngularGrid

    def hbar(self, x):
        x = np.asarray(x, dtype=float)
        xi = self.angular.nodes
        X = np.broadcast_to(x[..., None, :], x.shape[:-1] + (xi.size, 2))
        W = np.broadcast_to(velocity_from_xi(xi), X.shape)
        vals = np.broadcast_to(np.asarray(self.h(X, W), dtype=float),
                               X.shape[:-1])
        return vals @ self.angular.weights / (2.0 * np.pi)

    def evaluate(self, tau, x, w):
        x = np.asarray(x, dtype=float)
        hv = np.broadcast_to(np.asarray(self.h(x, w), dtype=float),
                             x.shape[:-1])
        return np.exp(-np.asarray(tau)) * (hv - self.hbar(x))


@dataclass
class BoundaryLayerCollection:
    """Cutoff boundary-layer samples psi0(eps eta) (f - f_inf) on a
    (t_samples, theta_samples, eta, phi) lattice, plus the far fields."""

    eps: float
    kind: str
    t_samples: np.ndarray
    theta_samples: np.ndarray
    eta: np.ndarray
    angular: AngularGrid
    layers: np.ndarray        # (n_t, n_th, n_eta, n_phi), cutoff applied
    f_inf: np.ndarray         # (n_t, n_th)
    solutions: list = field(default_factory=list, repr=False)

    def _corner(self, it, im, eta_q, phi_q):
        plane = self.layers[it, im]
        inside = eta_q <= self.eta[-1] + 1e-12
        ei = np.minimum(eta_q, self.eta[-1])
        i0, wi = _interp_weights_1d(self.eta, ei)
        j0, j1, wj = _periodic_weights(self.angular.nodes, phi_q)
        v = ((1 - wi) * ((1 - wj) * plane[i0, j0] + wj * plane[i0, j1])
             + wi * ((1 - wj) * plane[i0 + 1, j0] + wj * plane[i0 + 1, j1]))
        return np.where(inside, v, 0.0)

    def evaluate(self, t, eta_q, theta_q, phi_q):
        """Multilinear evaluation of the cutoff layer at (t, eta, theta, phi)."""
        eta_q = np.asarray(eta_q, dtype=float)
        phi_q = np.asarray(phi_q, dtype=float)
        ts = self.t_samples
        t = float(np.clip(t, ts[0], ts[-1]))
        kt, wt = _interp_weights_1d(ts, t)
        kt, wt = int(kt), float(wt)
        m0, m1, wm = _periodic_weights(self.theta_samples, theta_q)
        if self.theta_samples.size == 1:
            lo = self._corner(kt, 0, eta_q, phi_q)
            hi = self._corner(kt + 1, 0, eta_q, phi_q)
            return (1 - wt) * lo + wt * hi
        out = 0.0
        for kk, wk in ((kt, 1 - wt), (kt + 1, wt)):
            if wk == 0.0:
                continue
            acc = np.zeros(np.broadcast(eta_q, phi_q, wm).shape)
            for m in range(self.theta_samples.size):
                sel0 = m0 == m
                sel1 = m1 == m
                if not (sel0.any() or sel1.any()):
                    continue
                v = self._corner(kk, m, eta_q, phi_q)
                acc += np.where(sel0, (1 - wm) * v, 0.0)
                acc += np.where(sel1, wm * v, 0.0)
            out = out + wk * acc
        return out

    def far_field(self, t, theta_q):
        ts = self.t_samples
        t = float(np.clip(t, ts[0], ts[-1]))
        kt, wt = _interp_weights_1d(ts, t)
        kt, wt = int(kt), float(wt)
        row = (1 - wt) * self.f_inf[kt] + wt * self.f_inf[kt + 1]
        m0, m1, wm = _periodic_weights(self.theta_samples, theta_q)
        return (1 - wm) * row[m0] + wm * row[m1]

    def dtheta(self):
        """Centered-difference d/dtheta of the cutoff layers across theta samples."""
        n = self.theta_samples.size
        if n == 1:
            return np.zeros_like(self.layers)
        if n < 8:
            raise ValueError("need >= 8 theta samples for d/dtheta")
        d = 2.0 * np.pi / n
        return (np.roll(self.layers, -1, axis=1)
                - np.roll(self.layers, 1, axis=1)) / (2.0 * d)


def default_t_samples(eps, T):
    """Time samples for the layer solves, refined near t = 0."""
    anchors = tuple(a for a in eps * eps * np.array([0.5, 1, 2, 4, 8]) if a < T)
    return graded_nodes(T, eps * eps * 0.5, max(T / 12.0, 1e-3), anchors=anchors)


def default_eta_grid(eps, kind):
    eta_max = min(40.0, 0.75 / eps) if kind == "geometric" else 40.0
    return graded_nodes(eta_max, 0.1, 0.5)


def _theta_independent(g, T, tol=1e-13):
    th = np.linspace(-np.pi, np.pi, 12, endpoint=False)
    for t in (0.0, 0.37 * T, T):
        for phi in (-2.0, -0.5, 0.5, 2.5):
            v = np.asarray(g(t, th, np.full_like(th, phi)), dtype=float)
            v = np.broadcast_to(v, th.shape)
            if v.max() - v.min() > tol:
                return False
    return True


def build_boundary_layer0(eps, g, kind, t_samples, theta_samples,
                          angular=None, eta_grid=None, milne_tol=1e-9):
    """Zeroth order boundary layer: one Milne solve per (t, theta) sample.

    Data that are scalar multiples of an already-solved datum reuse the
    cached solution (the Milne problem is linear), so factorized data like
    a(t) b(phi) cost a single solve.
    """
    angular = angular or AngularGrid(64)
    t_samples = np.asarray(t_samples, dtype=float)
    theta_samples = np.asarray(theta_samples, dtype=float)
    eta = np.asarray(eta_grid, dtype=float) if eta_grid is not None \
        else default_eta_grid(eps, kind)
    force_kind = "geometric" if kind == "geometric" else "none"
    phi = angular.nodes
    cut = cutoff_psi0(eps * eta)[:, None]

    cache = []
    layers = np.zeros((t_samples.size, theta_samples.size, eta.size, phi.size))
    f_inf = np.zeros((t_samples.size, theta_samples.size))
    sols = []
    for it, tv in enumerate(t_samples):
        for im, tm in enumerate(theta_samples):
            H = np.broadcast_to(
                np.asarray(g(tv, np.full_like(phi, tm), phi), dtype=float),
                phi.shape).copy()
            scale = float(np.max(np.abs(H)))
            if scale < 1e-300:
                continue
            unit = H / scale
            hit = None
            for u_cached, lay, fi in cache:
                if np.max(np.abs(unit - u_cached)) < 1e-13:
                    hit = (lay, fi)
                    break
            if hit is None:
                prob = MilneProblem(eps=eps, force_kind=force_kind,
                                    H=lambda p, v=unit: _phi_interp(phi, v, p),
                                    eta_grid=eta, angular=angular,
                                    eta_max=float(eta[-1]))
                sol = solve_milne(prob, tol=milne_tol)
                lay = cut * (sol.f - sol.f_inf)
                hit = (lay, sol.f_inf)
                cache.append((unit, lay, sol.f_inf))
                sols.append(sol)
            layers[it, im] = scale * hit[0]
            f_inf[it, im] = scale * hit[1]
    return BoundaryLayerCollection(eps, kind, t_samples, theta_samples, eta,
                                   angular, layers, f_inf, sols)


def _phi_interp(phi_nodes, values, q):
    j0, j1, w = _periodic_weights(phi_nodes, q)
    return (1 - w) * values[j0] + w * values[j1]


def build_initial_layer0(h, angular=None):
    """Closed-form zeroth order initial layer evaluator."""
    return InitialLayer0(h, angular or AngularGrid(64))


def build_interior0(eps, bl0: BoundaryLayerCollection, il0: InitialLayer0,
                    grid: SpaceTimeGrid) -> ScalarFieldTime:
    """Heat solve with initial hbar(x) and Dirichlet datum f0(t, inf, theta)."""
    prob = HeatProblem(initial=il0.hbar,
                       dirichlet=lambda t, th: bl0.far_field(t, th),
                       T=float(grid.time[-1]))
    return solve_heat_disk(prob, grid)


@dataclass
class InitialLayer1:
    """First order initial layer from the explicit Duhamel quadrature."""

    h: Callable
    il0: InitialLayer0
    interior0: ScalarFieldTime
    angular: AngularGrid
    d_tau: float = 0.05

    def _a(self, x):
        """a(x) = <w . grad_x h(x, w)>, the angular average."""
        xi = self.angular.nodes
        x = np.asarray(x, dtype=float)
        X = np.broadcast_to(x[..., None, :], x.shape[:-1] + (xi.size, 2)).copy()
        W = np.broadcast_to(velocity_from_xi(xi), X.shape)
        g1, g2 = _grad_fd(lambda p: self.h(p, W), X)
        dots = W[..., 0] * g1 + W[..., 1] * g2
        return dots @ self.angular.weights / (2.0 * np.pi)

    def _wgrad_h_fluct(self, x, w):
        """w . grad_x (h - hbar)(x, w)."""
        g1h, g2h = _grad_fd(lambda p: self.h(p, w), x)
        g1b, g2b = _grad_fd(self.il0.hbar, x)
        w = np.asarray(w, dtype=float)
        return w[..., 0] * (g1h - g1b) + w[..., 1] * (g2h - g2b)

    def f1_infty(self, x):
        """Far field F_1(inf, x) = -a(x)."""
        return -self._a(x)

    def evaluate(self, tau, x, w):
        """ub_{I,1} = F_1(tau) - F_1(inf), trapezoidal in the s quadrature."""
        tau = float(tau)
        x = np.asarray(x, dtype=float)
        a = self._a(x)
        gh = self._wgrad_h_fluct(x, w)
        g1, g2 = _field_gradient(self.interior0, 0.0, x)
        w = np.asarray(w, dtype=float)
        f1_0 = w[..., 0] * g1 + w[..., 1] * g2
        # F_1(tau) = e^{-tau} F_1(0) + int_0^tau (bar F_1 - w.grad ub_{I,0}) e^{s-tau} ds
        # with bar F_1(s) = -(1 - e^{-s}) a(x), w.grad ub_{I,0}(s) = e^{-s} gh.
        n = max(8, int(np.ceil(tau / self.d_tau)))
        s = np.linspace(0.0, tau, n + 1)
        shp = (s.size,) + (1,) * a.ndim
        sv = s.reshape(shp)
        integrand = (-( -np.expm1(-sv)) * a - np.exp(-sv) * gh) * np.exp(sv - tau)
        F1_tau = np.exp(-tau) * f1_0 + np.trapezoid(integrand, s, axis=0)
        return F1_tau - (-a)


def build_order1(eps, g, h, kind, bl0: BoundaryLayerCollection,
                 il0: InitialLayer0, interior0: ScalarFieldTime,
                 grid: SpaceTimeGrid, milne_tol=1e-9):
    """First order components: boundary layer, initial layer, interior.

    The order-1 Milne problems carry the source cos(phi) psi(eps eta) /
    (1 - eps eta) d_theta(layer0) and inflow datum w . grad u_0 at the
    boundary; theta derivatives come from centered differences across the
    theta samples (requires >= 8 samples unless the data are
    theta-independent).
    """
    angular = bl0.angular
    phi = angular.nodes
    eta = bl0.eta
    t_samples, theta_samples = bl0.t_samples, bl0.theta_samples
    dth = bl0.dtheta()
    psi = cutoff_psi(eps * eta)
    denom = np.where(psi > 0, 1.0 - eps * eta, 1.0)
    geom = np.where(psi > 0, psi / denom, 0.0)
    src_factor = np.cos(phi)[None, :] * geom[:, None]
    force_kind = "geometric" if kind == "geometric" else "none"
    cut = cutoff_psi0(eps * eta)[:, None]

    layers1 = np.zeros_like(bl0.layers)
    f1_inf = np.zeros_like(bl0.f_inf)
    sols = []
    for it, tv in enumerate(t_samples):
        for im, tm in enumerate(theta_samples):
            g1, g2 = gradient_at_boundary(interior0, min(tv, interior0.grid.time[-1]),
                                          tm)
            wphi = velocity_from_xi(wrap_angle(phi - tm))
            H = wphi[:, 0] * g1 + wphi[:, 1] * g2
            S_arr = src_factor * dth[it, im]
            if np.max(np.abs(H)) < 1e-14 and np.max(np.abs(S_arr)) < 1e-14:
                continue

            def S(eta_q, phi_q, S_arr=S_arr):
                i0, wi = _interp_weights_1d(eta, np.minimum(eta_q, eta[-1]))
                j0, j1, wj = _periodic_weights(phi, phi_q)
                v = ((1 - wi) * ((1 - wj) * S_arr[i0, j0] + wj * S_arr[i0, j1])
                     + wi * ((1 - wj) * S_arr[i0 + 1, j0] + wj * S_arr[i0 + 1, j1]))
                return np.where(eta_q <= eta[-1], v, 0.0)

            prob = MilneProblem(eps=eps, force_kind=force_kind,
                                H=lambda p, v=H: _phi_interp(phi, v, p),
                                S=S, eta_grid=eta, angular=angular,
                                eta_max=float(eta[-1]),
                                source_decay=(float(np.max(np.abs(S_arr))), 1.0))
            sol = solve_milne(prob, tol=milne_tol)
            layers1[it, im] = cut * (sol.f - sol.f_inf)
            f1_inf[it, im] = sol.f_inf
            sols.append(sol)
    bl1 = BoundaryLayerCollection(eps, kind, t_samples, theta_samples, eta,
                                  angular, layers1, f1_inf, sols)

    il1 = InitialLayer1(h, il0, interior0, angular)
    prob1 = HeatProblem(initial=il1.f1_infty,
                        dirichlet=lambda t, th: bl1.far_field(t, th),
                        T=float(grid.time[-1]))
    interior1 = solve_heat_disk(prob1, grid)
    return bl1, il1, interior1


@dataclass
class ExpansionBundle:
    """Assembled expansion: interior + initial layer + boundary layer."""

    kind: str
    order: int
    eps: float
    interior0: ScalarFieldTime
    initial_layer0: InitialLayer0
    boundary_layer0: BoundaryLayerCollection
    boundary_layer1: Optional[BoundaryLayerCollection] = None
    initial_layer1: Optional[InitialLayer1] = None
    interior1: Optional[ScalarFieldTime] = None

    def __post_init__(self):
        if self.kind not in ("geometric", "classical"):
            raise ValueError(f"unknown expansion kind {self.kind!r}")
        if self.order not in (0, 1):
            raise ValueError("order must be 0 or 1")
        if self.order == 1 and (self.boundary_layer1 is None
                                or self.interior1 is None
                                or self.initial_layer1 is None):
            raise ValueError("order-1 bundle is missing components")


def build_expansion(eps, g, h, kind="geometric", order=1, T=1.0,
                    angular=None, interior_grid=None, t_samples=None,
                    theta_samples=None, eta_grid=None,
                    milne_tol=1e-9) -> ExpansionBundle:
    """Build the full order-0/1 expansion bundle for data (g, h)."""
    angular = angular or AngularGrid(64)
    if t_samples is None:
        t_samples = default_t_samples(eps, T)
    if theta_samples is None:
        if _theta_independent(g, T):
            theta_samples = np.array([0.0])
        else:
            theta_samples = np.linspace(-np.pi, np.pi, 16, endpoint=False)
    else:
        theta_samples = np.asarray(theta_samples, dtype=float)
    if theta_samples.size not in (1,) and theta_samples.size < 8:
        raise ValueError("need >= 8 theta samples for theta-dependent data")
    if interior_grid is None:
        radial = np.linspace(0.0, 1.0, 65)
        n_th = 1 if theta_samples.size == 1 else 64
        theta = (np.array([0.0]) if n_th == 1
                 else np.linspace(-np.pi, np.pi, n_th, endpoint=False))
        tgrid = graded_nodes(T, eps * eps * 0.5, max(T / 100.0, 1e-3))
        interior_grid = SpaceTimeGrid(radial, theta, tgrid)

    bl0 = build_boundary_layer0(eps, g, kind, t_samples, theta_samples,
                                angular, eta_grid, milne_tol)
    il0 = build_initial_layer0(h, angular)
    interior0 = build_interior0(eps, bl0, il0, interior_grid)
    bl1 = il1 = interior1 = None
    if order == 1:
        bl1, il1, interior1 = build_order1(eps, g, h, kind, bl0, il0,
                                           interior0, interior_grid, milne_tol)
    return ExpansionBundle(kind, order, eps, interior0, il0, bl0,
                           bl1, il1, interior1)


def evaluate_expansion(bundle: ExpansionBundle, t, x, w):
    """Evaluate the expansion at time t, positions x (..., 2), velocities w."""
    eps = bundle.eps
    t = float(t)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    r = np.minimum(np.sqrt(np.sum(x * x, axis=-1)), 1.0)
    theta = np.arctan2(x[..., 1], x[..., 0])
    xi = np.arctan2(-w[..., 0], -w[..., 1])
    phi = wrap_angle(theta + xi)
    eta = (1.0 - r) / eps
    tau = t / (eps * eps)

    out = np.asarray(bundle.interior0.at(t, r, theta), dtype=float)
    out = out + bundle.initial_layer0.evaluate(tau, x, w)
    out = out + bundle.boundary_layer0.evaluate(t, eta, theta, phi)
    if bundle.order == 1:
        bu1 = bundle.interior1.at(t, r, theta)
        g1, g2 = _field_gradient(bundle.interior0, t, x)
        u1 = bu1 - (w[..., 0] * g1 + w[..., 1] * g2)
        term = (u1 + bundle.initial_layer1.evaluate(tau, x, w)
                + bundle.boundary_layer1.evaluate(t, eta, theta, phi))
        out = out + eps * term
    return out
