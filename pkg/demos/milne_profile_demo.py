"""Narrative demo: anatomy of one epsilon-Milne boundary layer.

Solves a single geometric half-space problem, then prints the layer
profile fbar(eta), the conserved-flux check, and the fitted exponential
decay rate toward the far-field constant.
"""

import numpy as np

from disklayer.core import AngularGrid
from disklayer.milne import MilneProblem, solve_milne

eps = 0.05
prob = MilneProblem(eps=eps, force_kind="geometric",
                    H=lambda p: 2.0 + np.exp(-1.0) * np.cos(p),
                    angular=AngularGrid(128))
sol = solve_milne(prob)

print(f"epsilon = {eps}, datum H(phi) = 2 + e^-1 cos(phi)")
print(f"far-field value f_inf      = {sol.f_inf:.8f}")
print(f"max |weighted flux|        = {np.max(np.abs(sol.flux_profile)):.2e}")
print(f"fitted decay rate K0       = {sol.K0_fit:.4f}  "
      f"(R^2 = {sol.K0_r2:.4f}, profile = {sol.fit_profile})")
print(f"source-iteration residual  = {sol.residual:.2e} "
      f"after {sol.iterations} sweeps")

print("\n  eta      fbar        layer amplitude")
eta = prob.eta_grid
amp = np.sqrt(np.mean((sol.f - sol.fbar[:, None]) ** 2, axis=1))
for i in np.linspace(0, eta.size - 1, 12).astype(int):
    print(f"{eta[i]:6.2f}  {sol.fbar[i]:10.6f}  {amp[i]:14.6e}")

print("\nthe anisotropic part dies exponentially in eta while fbar stays")
print("flat: the datum's cos component is pure layer, its mean is pure")
print("far field.")
