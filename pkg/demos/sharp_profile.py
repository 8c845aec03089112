"""
Degenerate and singular model problems with explicit radial solutions.

Run with ``python demos/sharp_profile.py``; takes about a minute.

For Phi(t) = t^p and F the Laplacian in two dimensions, the profile
u = |x|^m solves Phi(|Du|) Delta u = f with constant f exactly when
(m - 1) p + m - 2 = 0.  For p = 2 this gives m = 4/3, whose gradient is only
1/3-Hoelder at the origin; for p = -1/2 it gives m = 3.
"""

import numpy as np

from fnlab import Ball, OperatorSpec, Problem, SolveConfig, power, solve_dirichlet
from fnlab import analysis as A
from fnlab.config import parse_domain

lap = OperatorSpec.laplacian()

# %% convergence towards |x|^(4/3) and |x|^3
cases = [("t^2, |x|^(4/3)", power(2), 4 / 3, (4 / 3) ** 4),
         ("t^(-1/2), |x|^3", power(-0.5), 3.0, 3 * np.sqrt(3))]
for label, law, m, f in cases:
    p = Problem(Ball(), lap, law, f, 1.0)
    errs = []
    for h in (1 / 16, 1 / 32):
        u, rep = solve_dirichlet(p, h, SolveConfig())
        x = u.grid.interior
        errs.append(np.abs(u.interior - np.linalg.norm(x, axis=1) ** m).max())
        print(f"{label:18s} h=1/{round(1 / h):<3d} error {errs[-1]:.4f}  "
              f"steps {sum(rep.iterations)}")
    print(f"{'':18s} observed order {np.log2(errs[0] / errs[1]):.2f}")

# %% the gradient exponent near a boundary point where Du vanishes
# On the half disk {x2 > 0} the boundary passes through the origin, where the
# profile is flattest.  Affine fits on shrinking balls there should lose
# accuracy like r^(1 + alpha) with alpha = 1/3.
dom = parse_domain("halfgraph(0, 1)")
g = lambda x: np.linalg.norm(x, axis=-1) ** (4 / 3)
p = Problem(dom, lap, power(2), (4 / 3) ** 4, g)
u, _ = solve_dirichlet(p, 1 / 64, SolveConfig())
tr = A.affine_fit_sequence(u, (0.0, 0.0), 0.5, 2)
print("fit radii ", tr.radii)
print("fit errors", tr.errors)
tgt = A.alpha_admissible(power(2), 0.999, alpha_bar=0.999)
print(f"alpha fit {tr.alpha:.3f}; admissible cap {tgt.alpha_max:.4f} (attained: {tgt.attained})")
