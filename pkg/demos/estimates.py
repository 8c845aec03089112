"""
The a priori estimates on computed solutions: sup bound, barriers and
comparison.

Run with ``python demos/estimates.py``; takes well under a minute.
"""

import numpy as np

from fnlab import (Ball, BoundaryData, Ellipse, OperatorSpec, Problem, SolveConfig, build_grid,
                   double_phase, power, solve_dirichlet)
from fnlab import analysis as A

# %% sup bound through the contact set
# With g = 0 the computed solution of t^2 Delta u = c (4/3)^4 is close to
# c^(1/3) (|x|^(4/3) - 1), so sup|u| should grow like c^(1/3).
zero = BoundaryData(lambda x: np.zeros(x.shape[:-1]))
sups = []
for c in (1.0, 4.0, 16.0):
    f = c * (4 / 3) ** 4
    u, _ = solve_dirichlet(Problem(Ball(), OperatorSpec.laplacian(), power(2), f, 0.0),
                           1 / 32, SolveConfig())
    rep = A.abp_verify(u, zero, f, power(2))
    sups.append(np.abs(u.interior).max())
    print(f"c={c:4.0f}  sup|u| {sups[-1]:.4f}  fitted constant {rep.constant_fit:.4f}  "
          f"contact nodes {rep.contact_nodes}")
print(f"growth exponent {A.scaling_exponent([1, 4, 16], sups):.3f} (expected 1/3)")

# %% barriers trap the solution
law = double_phase(0.0, 1.0, 0.5)
p = Problem(Ellipse(1.2, 0.8), OperatorSpec.pucci("-", 0.5, 1.0), law,
            lambda x: 1 + x[..., 0], lambda x: np.sin(2 * x[..., 0]) * np.cos(x[..., 1]))
u, rep = solve_dirichlet(p, 1 / 32, SolveConfig())
v, w = rep.barriers
print(f"barrier constants K_sub={rep.K_sub:g} K_super={rep.K_super:g}")
print(f"max(v - u) = {np.max(v.interior - u.interior):.3e}, "
      f"max(u - w) = {np.max(u.interior - w.interior):.3e}")

# %% comparison on random proper pairs
grid = build_grid(p.domain, 1 / 16)
rng = np.random.default_rng(0)
worst = -np.inf
for _ in range(20):
    sub, sup, bv, bw = A.random_proper_pair(p, grid, 1e-2, rng)
    res = A.comparison_verify(sub, sup, p, eps=1e-2, bv=bv, bw=bw)
    assert res.passed
    worst = max(worst, res.max_excess)
print(f"20 pairs ordered; largest max(v - w) {worst:.3e}")
