"""Disk geometry, coordinate frames, angular quadrature, and grid containers.

Conventions (used throughout the package):

* space point x = (x1, x2) in the closed unit disk, mu = 1 - |x| is the
  distance to the boundary, theta = atan2(x2, x1) in [-pi, pi);
* velocity angle xi with w = (-sin xi, -cos xi);
* layer angle phi = theta + xi wrapped to [-pi, pi); at a boundary point
  the inflow set {w . n < 0} is exactly {sin phi > 0};
* stretched layer variable eta = mu / eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TOL = 1e-12


def validate_epsilon(eps):
    """Check 0 < eps < 1 and return it as a float."""
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must satisfy 0 < eps < 1, got {eps}")
    return eps


def wrap_angle(a):
    """Wrap angle(s) to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi


def velocity_from_xi(xi):
    """Unit velocity w = (-sin xi, -cos xi) for velocity angle xi."""
    xi = np.asarray(xi, dtype=float)
    return np.stack([-np.sin(xi), -np.cos(xi)], axis=-1)


def xi_from_velocity(w):
    """Inverse of velocity_from_xi."""
    w = np.asarray(w, dtype=float)
    return wrap_angle(np.arctan2(-w[..., 0], -w[..., 1]))


def exit_time(x, w, eps):
    """Backward exit time: smallest s >= 0 with |x - eps*s*w| = 1.

    Closed-form positive root of the ray-circle quadratic.  Accepts
    arrays broadcast over the leading axes (x, w shaped (..., 2)).
    """
    eps = validate_epsilon(eps)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 > 1.0 + 1e-10):
        raise ValueError("exit_time: point outside the closed unit disk")
    xw = np.sum(x * w, axis=-1)
    disc = xw * xw + 1.0 - r2
    s = (xw + np.sqrt(np.maximum(disc, 0.0))) / eps
    return np.maximum(s, 0.0)


def classify_boundary(x0, w, tol=BOUNDARY_TOL):
    """Classify a boundary phase point as 'inflow', 'outflow', or 'grazing'."""
    x0 = np.asarray(x0, dtype=float)
    w = np.asarray(w, dtype=float)
    r = float(np.hypot(x0[0], x0[1]))
    if abs(r - 1.0) > tol:
        raise ValueError(f"classify_boundary: |x0| = {r} is not on the boundary")
    wn = float(x0[0] * w[0] + x0[1] * w[1])
    if wn < -tol:
        return "inflow"
    if wn > tol:
        return "outflow"
    return "grazing"


def to_layer_frame(x, xi, eps):
    """Map (x, xi) to layer coordinates (eta, theta, phi)."""
    eps = validate_epsilon(eps)
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    eta = (1.0 - r) / eps
    theta = np.arctan2(x[..., 1], x[..., 0])
    phi = wrap_angle(theta + np.asarray(xi, dtype=float))
    return eta, theta, phi


def from_layer_frame(eta, theta, phi, eps):
    """Inverse of to_layer_frame: returns (x, xi)."""
    eps = validate_epsilon(eps)
    r = 1.0 - eps * np.asarray(eta, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    xi = wrap_angle(np.asarray(phi, dtype=float) - theta)
    return x, xi


@dataclass(frozen=True)
class AngularGrid:
    """Midpoint-uniform angular quadrature on [-pi, pi).

    Nodes phi_j = -pi + (j + 1/2) * (2 pi / n_phi), equal weights
    2 pi / n_phi.  n_phi must be a multiple of 4 so that no node has
    sin phi_j = 0 or cos phi_j = 0.
    """

    n_phi: int
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.n_phi)
        if n <= 0 or n % 4 != 0:
            raise ValueError(f"n_phi must be a positive multiple of 4, got {n}")
        d = 2.0 * np.pi / n
        nodes = -np.pi + (np.arange(n) + 0.5) * d
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.full(n, d))


def velocity_average(values, grid):
    """Angular average (1/2pi) * sum_j weight_j * u_j over the last axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n_phi:
        raise ValueError("velocity_average: slice length does not match grid")
    if values.shape[-1] == 0:
        raise ValueError("velocity_average: empty slice")
    return values @ grid.weights / (2.0 * np.pi)


def _check_increasing(nodes, name):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise ValueError(f"{name}: need at least two nodes")
    if np.any(np.diff(nodes) <= 0):
        raise ValueError(f"{name}: nodes must be strictly increasing")
    return nodes


def _check_ratios(nodes, name, lo=0.5, hi=2.0 + 1e-9):
    h = np.diff(nodes)
    ratios = h[1:] / h[:-1]
    if ratios.size and (ratios.min() < lo - 1e-9 or ratios.max() > hi):
        raise ValueError(
            f"{name}: spacing ratios must stay within [{lo}, {hi}], "
            f"got [{ratios.min():.3g}, {ratios.max():.3g}]"
        )


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Polar space-time grid: radial nodes in [0, 1], theta nodes, time nodes.

    Radial nodes are refined geometrically toward r = 1 and time nodes
    toward t = 0 (ratio <= 2) so that O(eps) space layers and O(eps^2)
    time layers are resolved.
    """

    radial: np.ndarray
    theta: np.ndarray
    time: np.ndarray
    check_ratios: bool = True

    def __post_init__(self):
        radial = _check_increasing(self.radial, "radial")
        time = _check_increasing(self.time, "time")
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or theta.size < 1:
            raise ValueError("theta: need at least one node")
        if radial[0] < 0.0 or radial[-1] > 1.0 + 1e-12:
            raise ValueError("radial nodes must lie in [0, 1]")
        if self.check_ratios:
            _check_ratios(radial, "radial")
            _check_ratios(time, "time")
        object.__setattr__(self, "radial", radial)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "time", time)


def _fill_segment(length, h_start, h_cap, growth=1.4):
    """Spacings filling [0, length], starting near h_start, geometric growth
    capped at h_cap, then rescaled to land exactly; ratios stay in [1, growth].
    """
    if length <= 0:
        return np.empty(0)
    h_start = min(h_start, h_cap, length)
    spacings = []
    total, h = 0.0, h_start
    while total < length - 1e-15:
        spacings.append(h)
        total += h
        h = min(h * growth, h_cap)
    spacings = np.asarray(spacings)
    return spacings * (length / spacings.sum())


def graded_nodes(stop, h_fine, h_cap, anchors=(), growth=1.4):
    """Nodes on [0, stop], fine spacing h_fine near 0 growing to h_cap.

    Anchor values are included exactly; between consecutive anchors the
    spacing continues growing geometrically (ratio <= growth <= 2).
    """
    pts = sorted({0.0, float(stop)} | {float(a) for a in anchors if 0.0 < a < stop})
    nodes = [0.0]
    h = h_fine
    for a, b in zip(pts[:-1], pts[1:]):
        seg = _fill_segment(b - a, h, h_cap, growth)
        nodes.extend(a + np.cumsum(seg))
        nodes[-1] = b
        h = seg[-1] if seg.size else h
    return np.asarray(nodes)


def make_radial_grid(eps, d_eta_target=0.25, h_cap=0.05, mu_anchors=(), growth=1.4):
    """Radial nodes refined toward r = 1 with finest spacing <= eps * d_eta_target."""
    eps = validate_epsilon(eps)
    mu = graded_nodes(1.0, eps * d_eta_target, h_cap, anchors=mu_anchors, growth=growth)
    return np.sort(1.0 - mu)


def make_time_grid(eps, horizon, d_tau_target=0.25, h_cap=0.02, t_anchors=(), growth=1.4):
    """Time nodes refined toward t = 0 with finest spacing <= eps^2 * d_tau_target."""
    eps = validate_epsilon(eps)
    return graded_nodes(float(horizon), eps * eps * d_tau_target, h_cap,
                        anchors=t_anchors, growth=growth)


@dataclass
class KineticField:
    """Sampled kinetic density u[t_k, r_i, theta_m, xi_j].

    The angular index runs over the velocity angles xi of ``angular.nodes``.
    ``rotation_invariant`` marks fields produced by the reduced solver for
    rotationally invariant data: then the stored theta grid has a single
    node theta = 0 and u(t, r, theta, xi) = values[t, r, 0, wrap(theta + xi)].
    """

    grid: SpaceTimeGrid
    angular: AngularGrid
    values: np.ndarray
    rotation_invariant: bool = False

    def __post_init__(self):
        expected = (self.grid.time.size, self.grid.radial.size,
                    self.grid.theta.size, self.angular.n_phi)
        if self.values.shape != expected:
            raise ValueError(
                f"KineticField: values shape {self.values.shape} != grids {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("KineticField: non-finite values")
