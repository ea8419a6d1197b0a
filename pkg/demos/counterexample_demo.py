"""Narrative demo: point values that tell the two layer theories apart.

For the boundary datum H(phi) = e^{-1} cos(phi) + 2 the steady kinetic
density is read off at distance n*epsilon from the boundary along the
near-grazing direction phi = epsilon.  Closed-form asymptotics predict

    u(n eps)  -> (1 - e^{-n})       ubar(0) + e^{-n}        H(n eps)
    U(n eps)  -> (1 - e^{1-sqrt(1+2n)}) Ubar(0) + e^{1-sqrt(1+2n)} H(..)

for the classical (u) and geometric (U) layer equations.  The two weights
differ by about 0.11, so the profiles disagree by an O(1) amount that
does not vanish as epsilon -> 0.
"""

import time

from disklayer.experiments import (counterexample_solve,
                                   milne_point_asymptotics)

print(f"{'epsilon':>8}  {'u (classical)':>14}  {'U (geometric)':>14}  "
      f"{'gap':>8}  {'pred gap':>9}")

start = time.time()
for eps in (0.04, 0.02, 0.01):
    u_pt, U_pt, sol_c, sol_g = counterexample_solve(eps)
    pred_u, pred_U = milne_point_asymptotics(
        1.0, eps, float(sol_c.fbar[0]), float(sol_g.fbar[0]))
    print(f"{eps:8.3f}  {u_pt:14.6f}  {U_pt:14.6f}  "
          f"{abs(U_pt - u_pt):8.4f}  {abs(pred_U - pred_u):9.4f}")

print(f"\nwall time: {time.time() - start:.1f} s")
print("the measured gap stays above 0.02 as epsilon shrinks: no choice of")
print("classical half-space layer can approximate the geometric one.")
