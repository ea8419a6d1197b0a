"""Narrative demo: the geometric expansion converges, the classical one stalls.

Runs the order-0 convergence study for both expansion kinds on the study
data g = t^2 e^{-t} cos(phi), h = 0, and prints the sup-norm error of the
expansion against the kinetic solver for each epsilon.

Expected picture: the geometric column shrinks roughly like epsilon (and
faster once the layer dominates), while the classical column stays pinned
near 0.22 no matter how small epsilon gets.
"""

import time

from disklayer.experiments import convergence_study

EPS_LIST = [0.2, 0.1, 0.05]

print("order-0 expansion error vs kinetic solution, sup over stored nodes")
print(f"{'epsilon':>8}  {'geometric':>12}  {'classical':>12}")

start = time.time()
reports = {kind: convergence_study(EPS_LIST, kind, order=0)
           for kind in ("geometric", "classical")}
for i, eps in enumerate(EPS_LIST):
    row_g = reports["geometric"].rows[i]
    row_c = reports["classical"].rows[i]
    print(f"{eps:8.3f}  {row_g['error_linf']:12.6f}  "
          f"{row_c['error_linf']:12.6f}")

print(f"\ntotal wall time: {time.time() - start:.1f} s")
print("geometric errors halve (and better) from eps=0.2 to eps=0.05;")
print("classical errors stay above 0.02: the straight half-space layer")
print("cannot absorb the curvature of the disk boundary.")
