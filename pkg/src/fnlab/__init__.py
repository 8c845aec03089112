"""
Finite-difference laboratory for degenerate and singular fully nonlinear
elliptic equations Phi(x, |xi + Du|) F(D^2 u) = f with Dirichlet data.

Submodules
----------
operators   uniformly elliptic operators (Pucci, linear, inf/sup families)
degeneracy  gradient weights Phi and their transforms
geometry    domains, grids and boundary data
scheme      monotone wide-stencil discretization and residual
solver      eps-continuation solver and barrier sub/supersolutions
analysis    checks of the a priori estimates on computed functions
cli         batch experiment runner (``fnlab`` console script)
"""

from .degeneracy import (DegeneracyLaw, GradientShift, check_a2, double_phase, phi_eval, power,
                         variable_exponent)
from .geometry import (Annulus, Ball, BoundaryData, Ellipse, GridFunction, HalfGraph,
                       ball_condition_radius, build_grid)
from .operators import EllipticityPair, OperatorSpec, apply_operator, pucci_minus, pucci_plus
from .scheme import SchemeParams, Stencil, discretize, monotonicity_check, residual
from .solver import (NonConvergence, Problem, SolveConfig, SolveReport, build_subsolution,
                     build_supersolution, solve_dirichlet, solve_epsilon)

__version__ = "0.1.0"

__all__ = [
    "Annulus", "Ball", "BoundaryData", "DegeneracyLaw", "Ellipse", "EllipticityPair",
    "GradientShift", "GridFunction", "HalfGraph", "NonConvergence", "OperatorSpec", "Problem",
    "SchemeParams", "SolveConfig", "SolveReport", "Stencil", "apply_operator",
    "ball_condition_radius", "build_grid", "build_subsolution", "build_supersolution",
    "check_a2", "discretize", "double_phase", "monotonicity_check", "phi_eval", "power",
    "pucci_minus", "pucci_plus", "residual", "solve_dirichlet", "solve_epsilon",
    "variable_exponent",
]
