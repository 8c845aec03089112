import numpy as np
import pytest

from fnlab import (Ball, BoundaryData, Ellipse, GradientShift, GridFunction, NonConvergence,
                   OperatorSpec, Problem, SchemeParams, SolveConfig, Stencil, build_grid,
                   build_subsolution, build_supersolution, discretize, power, residual,
                   solve_dirichlet, solve_epsilon)
from fnlab.degeneracy import transform_singular_to_degenerate

LAP = Problem(Ball(), OperatorSpec.laplacian(), power(0), 1.0, 0.0)


def start(problem, grid):
    bd = problem.boundary
    return GridFunction.from_interior(grid, bd(grid.domain.project(grid.interior)), bd)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(eps_schedule=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        SolveConfig(eta_factors=(1.0,))
    with pytest.raises(ValueError):
        SolveConfig(method="newton")
    with pytest.raises(ValueError):
        SolveConfig(threads=0)
    etas = SolveConfig().etas(0.5)
    assert etas[0] == pytest.approx(0.5e-2) and etas[-1] == pytest.approx(0.5e-6)


def test_solve_epsilon_reaches_tolerance():
    grid = build_grid(Ball(), 1 / 16)
    cfg = SolveConfig()
    u, rep = solve_epsilon(LAP, 1e-2, start(LAP, grid), cfg)
    disc = discretize(grid, LAP.boundary, LAP.operator, LAP.law)
    R = residual(disc, u, 1.0, params=SchemeParams(eta=1e-6 / 16, epsilon=1e-2))
    assert np.abs(R).max() < cfg.tol * 2
    assert rep.residual == pytest.approx(np.abs(R).max(), rel=1e-6, abs=1e-12)
    with pytest.raises(ValueError):
        solve_epsilon(LAP, 0.0, start(LAP, grid), cfg)


def test_explicit_and_semi_implicit_agree():
    grid = build_grid(Ball(), 1 / 8)
    p = Problem(Ball(), OperatorSpec.pucci("+", 1.0, 2.0), power(1), 2.0, lambda x: x[..., 0])
    a, _ = solve_epsilon(p, 1e-1, start(p, grid), SolveConfig(method="explicit", tol=1e-10))
    b, _ = solve_epsilon(p, 1e-1, start(p, grid), SolveConfig(tol=1e-10))
    assert np.abs(a.interior - b.interior).max() < 1e-8


@pytest.mark.parametrize("law", [power(2), power(-0.5)])
def test_explicit_iterates_are_monotone_from_barriers(law):
    grid = build_grid(Ball(), 1 / 8)
    p = Problem(Ball(), OperatorSpec.laplacian(), law, 1.0, 0.0)
    cfg = SolveConfig(method="explicit", tol=1e-9)
    w, _ = build_supersolution(grid, p, cfg=cfg)
    v, _ = build_subsolution(grid, p, cfg=cfg)
    down, rep = solve_epsilon(p, 1e-1, w, cfg, record=1)
    snaps = np.array(rep.snapshots)
    assert len(snaps) > 10
    assert np.all(np.diff(snaps, axis=0) <= 1e-14)
    up, rep = solve_epsilon(p, 1e-1, v, cfg, record=1)
    assert np.all(np.diff(np.array(rep.snapshots), axis=0) >= -1e-14)
    assert np.abs(up.interior - down.interior).max() < 1e-7


def test_mirrored_problem_gives_negated_solution():
    p = Problem(Ellipse(1.0, 0.7), OperatorSpec.pucci("+", 1.0, 2.0), power(1), 1.0,
                lambda x: 0.3 * x[..., 1], GradientShift((0.2, -0.1)))
    cfg = SolveConfig(eps_schedule=(1e-1, 1e-2, 1e-3), barriers=False)
    u, _ = solve_dirichlet(p, 1 / 16, cfg)
    v, _ = solve_dirichlet(p.mirrored(), 1 / 16, cfg)
    assert np.abs(u.interior + v.interior).max() < 1e-7


def test_gradient_shift_translates_profile():
    # u = |x|^(4/3) - xi.x solves |xi + Du|^2 Delta u = (4/3)^4
    xi = np.array([0.4, -0.2])
    exact = lambda x: np.linalg.norm(x, axis=-1) ** (4 / 3) - x @ xi
    p = Problem(Ball(), OperatorSpec.laplacian(), power(2), (4 / 3) ** 4, exact,
                GradientShift(tuple(xi)))
    u, rep = solve_dirichlet(p, 1 / 32, SolveConfig())
    err = np.abs(u.interior - exact(u.grid.interior)).max()
    assert rep.converged and err < 0.04


def test_non_convergence_carries_diagnostics():
    grid = build_grid(Ball(), 1 / 16)
    with pytest.raises(NonConvergence) as exc:
        solve_epsilon(LAP, 1e-3, start(LAP, grid), SolveConfig(max_steps=1))
    assert exc.value.iterations == 1 and exc.value.u is not None and exc.value.residual > 0


def test_transformed_law_is_refused():
    p = Problem(Ball(), OperatorSpec.laplacian(), transform_singular_to_degenerate(power(-0.5)))
    grid = build_grid(Ball(), 1 / 8)
    with pytest.raises(ValueError):
        solve_epsilon(p, 1e-2, start(p, grid))


def test_report_fields():
    u, rep = solve_dirichlet(LAP, 1 / 32, SolveConfig())
    assert rep.levels == [1 / 16, 1 / 32]
    assert len(rep.stages) == 5 and rep.converged
    d = rep.deltas[1:]
    assert d[-1] < d[-2] < d[-3]
    # exact Lipschitz constant of (|x|^2 - 1)/4 on the disk is 1/2
    assert 0.4 < rep.lipschitz <= 0.5 + 1e-3
    assert rep.K_super >= 1 and rep.K_sub >= 1


def test_threads_do_not_change_bits():
    p = Problem(Ball(), OperatorSpec.pucci("-", 1.0, 2.0), power(1), 1.0, 0.0)
    a, _ = solve_dirichlet(p, 1 / 32, SolveConfig(threads=1))
    b, _ = solve_dirichlet(p, 1 / 32, SolveConfig(threads=3))
    assert a.grid.n_interior > 2048
    assert a.values.tobytes() == b.values.tobytes()


@pytest.mark.parametrize("law", [power(0), power(2), power(-0.5)])
def test_barriers_are_discrete_sub_and_supersolutions(law):
    p = Problem(Ball(), OperatorSpec.pucci("+", 1.0, 2.0), law, 1.0, lambda x: x[..., 0] ** 2)
    grid = build_grid(p.domain, 1 / 16)
    cfg = SolveConfig()
    w, Kw = build_supersolution(grid, p, cfg=cfg)
    v, Kv = build_subsolution(grid, p, cfg=cfg)
    disc = discretize(grid, p.boundary, p.operator, p.law, Stencil(2))
    for eps, eta in zip(cfg.eps_schedule, cfg.etas(grid.h)):
        par = SchemeParams(eta=eta, epsilon=eps)
        assert residual(disc, w, 1.0, params=par).max() <= 0
        assert residual(disc, v, 1.0, params=par).min() >= 0
    assert np.all(v.interior <= w.interior)
    # barrier values approach g at the boundary
    near = grid.sd[: grid.n_interior] > -grid.h
    g = p.boundary(grid.domain.project(grid.interior[near]))
    assert np.all(w.interior[near] >= g - 1e-12) and np.all(v.interior[near] <= g + 1e-12)


def test_fixed_barrier_constant():
    grid = build_grid(Ball(), 1 / 16)
    w1, K1 = build_supersolution(grid, LAP, K=5.0)
    w2, K2 = build_supersolution(grid, LAP, K=50.0)
    assert (K1, K2) == (5.0, 50.0)
    assert np.all(w2.interior >= w1.interior - 1e-12)


def test_barriers_refuse_local_chart():
    from fnlab.config import parse_domain
    dom = parse_domain("halfgraph(0, 1)")
    p = Problem(dom, OperatorSpec.laplacian(), power(0), 1.0, 0.0)
    with pytest.raises(ValueError):
        build_supersolution(build_grid(dom, 1 / 16), p)
