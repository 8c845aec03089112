import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnlab import Ball, BoundaryData, Ellipse, OperatorSpec, build_grid, power
from fnlab.degeneracy import double_phase
from fnlab.scheme import (SchemeParams, Stencil, decompose_matrix, discrete_F, discrete_gradient,
                          discretize, monotonicity_check, residual, residual_parts,
                          second_difference)

GRID = build_grid(Ball(), 1 / 16)


def quad(Q, b=(0.0, 0.0), c=0.0):
    Q = np.asarray(Q, dtype=float)
    return lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, Q, x) + x @ np.asarray(b) + c


def near_boundary_node(grid):
    return int(np.argmax(grid.sd[: grid.n_interior]))


def test_stencil_frames():
    assert [f[0] for f in Stencil(1).frames] == [(1, 0), (1, 1)]
    assert len(Stencil(2).frames) == 4
    assert Stencil(2).max_angle_gap == pytest.approx(np.arctan(0.5))
    with pytest.raises(ValueError):
        Stencil(0)


def test_scheme_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(eta=0.0)
    with pytest.raises(ValueError):
        SchemeParams(epsilon=-1.0)
    with pytest.raises(ValueError):
        SchemeParams(gradient="central")


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_second_difference_exact_on_quadratics(a, b, c, p, q):
    Q = np.array([[a, b], [b, c]])
    u = quad(Q, (p, q))
    bd = BoundaryData(u)
    disc = discretize(GRID, bd, OperatorSpec.laplacian(), power(0))
    vals = u(GRID.interior)
    for i in (0, GRID.n_interior // 2, near_boundary_node(GRID)):
        for v in Stencil(2).directions:
            e = v / np.linalg.norm(v)
            assert second_difference(vals, i, v, disc) == pytest.approx(e @ Q @ e, abs=1e-8)


def test_discrete_laplacian_exact_on_quadratics():
    Q = np.array([[1.5, 0.4], [0.4, -0.3]])
    u = quad(Q, (0.2, -1.0), 0.7)
    disc = discretize(GRID, BoundaryData(u), OperatorSpec.laplacian(), power(0))
    vals = u(GRID.interior)
    for i in range(0, GRID.n_interior, 37):
        assert discrete_F(vals, i, disc) == pytest.approx(np.trace(Q), abs=1e-8)


def test_discrete_linear_operator_exact():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    Q = np.array([[0.3, -0.7], [-0.7, 1.1]])
    u = quad(Q)
    disc = discretize(GRID, BoundaryData(u), OperatorSpec.linear(A, 0.5, 2.5), power(0))
    vals = u(GRID.interior)
    for i in range(0, GRID.n_interior, 41):
        assert discrete_F(vals, i, disc) == pytest.approx(np.sum(A * Q), abs=1e-8)


@pytest.mark.parametrize("Q", [np.diag([2.0, -1.0]), np.array([[0.5, 1.5], [1.5, 0.5]])])
def test_discrete_pucci_exact_when_eigenvectors_on_stencil(Q):
    # eigenvectors along the axes or the diagonals are resolved exactly
    e = OperatorSpec.pucci("+", 1.0, 3.0)
    w = np.linalg.eigvalsh(Q)
    want = 3.0 * w[w > 0].sum() + 1.0 * w[w < 0].sum()
    u = quad(Q)
    disc = discretize(GRID, BoundaryData(u), e, power(0))
    vals = u(GRID.interior)
    for i in range(0, GRID.n_interior, 53):
        assert discrete_F(vals, i, disc) == pytest.approx(want, abs=1e-8)


def test_discrete_gradient_exact_on_affine():
    u = lambda x: 0.3 + 2 * x[..., 0] - 0.5 * x[..., 1]
    disc = discretize(GRID, BoundaryData(u), OperatorSpec.laplacian(), power(0))
    for i in (0, near_boundary_node(GRID)):
        assert discrete_gradient(u(GRID.interior), i, disc) == pytest.approx([2.0, -0.5], abs=1e-9)


def test_residual_of_exact_quadratic():
    u = lambda x: (np.sum(x * x, axis=-1) - 1) / 4
    disc = discretize(GRID, BoundaryData(u), OperatorSpec.laplacian(), power(0))
    vals = u(GRID.interior)
    R = residual(disc, vals, 1.0, params=SchemeParams(epsilon=0.1))
    assert np.allclose(R, -0.1 * vals, atol=1e-9)


def test_residual_with_degenerate_law():
    # Phi = t^2, u = |x|^2/2: |Du| = |x|, Delta u = 2
    u = lambda x: np.sum(x * x, axis=-1) / 2
    disc = discretize(GRID, BoundaryData(u), OperatorSpec.laplacian(), power(2))
    x = GRID.interior
    R, phi, _ = residual_parts(disc, u(x), 0.0, params=SchemeParams(eta=1e-8, gradient="centered"))
    assert np.allclose(phi, np.maximum(np.sum(x * x, 1), 1e-16), atol=1e-9)
    assert np.allclose(R, 2 * phi, atol=1e-8)


def test_decompose_matrix_reconstructs():
    unit = Stencil(2).unit_directions
    for A in (np.eye(2), np.array([[2.0, 0.5], [0.5, 1.0]]), np.array([[1.0, -0.9], [-0.9, 1.0]])):
        w = decompose_matrix(A, unit)
        assert np.all(w >= 0)
        assert np.allclose(np.einsum("k,ki,kj->ij", w, unit, unit), A, atol=1e-10)


def test_decompose_matrix_rejects_matrix_outside_cone():
    with pytest.raises(ValueError):
        decompose_matrix(np.array([[1.0, 0.6], [0.6, 0.5]]), Stencil(1).unit_directions)


@pytest.mark.parametrize("law", [power(2), power(-0.5), double_phase(0.5, 2.0, 1.0)])
def test_monotone_on_ellipse_with_shift(law):
    grid = build_grid(Ellipse(1.0, 0.6), 1 / 16)
    disc = discretize(grid, BoundaryData(lambda x: np.sin(3 * x[..., 0])),
                      OperatorSpec.pucci("-", 0.5, 2.0), law)
    rep = monotonicity_check(disc, SchemeParams(eta=1e-5, epsilon=1e-2), trials=3000, seed=4)
    assert rep.ok


def test_centered_gradient_is_not_monotone():
    # the check has teeth: centred gradients inside a degenerate weight break monotonicity
    disc = discretize(GRID, BoundaryData(lambda x: 0 * x[..., 0]), OperatorSpec.laplacian(),
                      power(2))
    rep = monotonicity_check(disc, SchemeParams(eta=1e-6, gradient="centered"), trials=3000)
    assert rep.violations > 0
