import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnlab.config import parse_domain
from fnlab.geometry import (Annulus, Ball, BoundaryData, Ellipse, GridFunction,
                            ball_condition_radius, boundary_norm, build_grid, signed_distance)

pts = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(np.array)


def _dense_distance(dom, x, m=200_000):
    # brute-force oracle: nearest of many boundary samples
    b = dom.boundary_samples(m)[0]
    return np.min(np.linalg.norm(b[None] - np.atleast_2d(x)[:, None], axis=-1), axis=1)


def test_ball_sdf():
    b = Ball((1.0, 0.5), 2.0)
    assert b.sdf(np.array([1.0, 0.5])) == -2.0
    assert b.sdf(np.array([4.0, 0.5])) == pytest.approx(1.0)
    assert b.project(np.array([[1.0, 3.0]]))[0] == pytest.approx([1.0, 2.5])


@settings(max_examples=60, deadline=None)
@given(pts)
def test_ellipse_sdf_matches_dense_sampling(x):
    e = Ellipse(2.0, 1.0, (0.3, -0.2))
    d = float(e.sdf(x[None])[0])
    assert abs(d) == pytest.approx(_dense_distance(e, x)[0], abs=2e-4)
    assert (d < 0) == (((x[0] - 0.3) / 2) ** 2 + (x[1] + 0.2) ** 2 < 1)
    p = e.project(x[None])[0]
    assert ((p[0] - 0.3) / 2) ** 2 + (p[1] + 0.2) ** 2 == pytest.approx(1.0, abs=1e-9)


def test_ellipse_axis_points():
    e = Ellipse(2.0, 1.0)
    # on the major axis near the centre the nearest point is off-axis
    x = np.array([[0.5, 0.0], [1.9, 0.0], [0.0, 0.0], [0.5, 1e-17]])
    assert np.allclose(np.abs(e.sdf(x)), _dense_distance(e, x), atol=2e-4)


@settings(max_examples=60, deadline=None)
@given(pts)
def test_annulus_sdf(x):
    a = Annulus(0.5, 1.5)
    r = np.linalg.norm(x)
    want = max(0.5 - r, r - 1.5)
    assert float(a.sdf(x[None])[0]) == pytest.approx(want, abs=1e-12)


def test_halfgraph_flat_chart():
    d = parse_domain("halfgraph(0, 1)")
    x = np.array([[0.2, 0.3], [0.0, -0.1], [0.0, 0.95]])
    assert np.allclose(d.sdf(x), [-0.3, 0.1, -0.05])


@pytest.mark.parametrize("dom, want", [
    (Ball((0, 0), 1.0), 1.0),
    (Ball((0, 0), 0.3), 0.3),
    (Ellipse(2.0, 1.0), 0.5),      # smallest radius of curvature b^2/a
    (Annulus(1.0, 2.0), 0.5),      # half the width
])
def test_ball_condition_radius(dom, want):
    assert ball_condition_radius(dom) == pytest.approx(want, rel=1e-6)


def test_build_grid_layout():
    g = build_grid(Ball(), 1 / 32)
    assert np.all(g.sd[: g.n_interior] < 0)
    assert np.all(g.sd[g.n_interior:] >= 0)
    assert g.n_interior == pytest.approx(np.pi * 32 ** 2, rel=0.02)
    for k in (0, g.n_interior - 1, g.n_active - 1):
        assert g.node_at(*g.ij[k]) == k
    assert np.allclose(g.points, g.origin + g.h * g.ij)
    assert np.any(np.all(g.interior == 0.0, axis=1))


def test_build_grid_rejects_coarse_h():
    with pytest.raises(ValueError):
        build_grid(Ball((0, 0), 0.3), 0.1)
    with pytest.raises(ValueError):
        build_grid(Ball(), -1.0)


def test_boundary_data_extension_is_exact_for_affine_g():
    bd = BoundaryData(lambda x: 1 + 2 * x[..., 0] - x[..., 1])
    g = build_grid(Ball(), 1 / 16)
    ext = bd.extend(g.band, g.band_projection)
    assert np.allclose(ext, bd(g.band), atol=1e-8)
    with pytest.raises(ValueError):
        BoundaryData(lambda x: 0 * x[..., 0], beta_g=1.0)


def test_boundary_norm_constant_and_linear():
    dom = Ball()
    assert boundary_norm(BoundaryData(lambda x: np.full(x.shape[:-1], 2.0)), dom) == \
        pytest.approx(2.0, abs=1e-6)
    # g = x1: sup 1, tangential derivative -sin, Hoelder part of order 1
    val = boundary_norm(BoundaryData(lambda x: x[..., 0], beta_g=0.5), dom)
    assert 2.0 < val < 4.0


def test_grid_function_roundtrip():
    g = build_grid(Ball(), 1 / 16)
    u = GridFunction.from_function(g, lambda x: x[..., 0] + 2 * x[..., 1])
    A = u.as_array()
    assert A[g.ij[5, 0], g.ij[5, 1]] == u.values[5]
    assert np.isnan(A).any()
    assert np.allclose((u - u).values, 0)
    assert np.allclose((-u).interior, -u.interior)
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(g, np.full(g.n_active, np.nan))


def test_signed_distance_alias():
    b = Ball()
    x = np.array([[0.5, 0.0]])
    assert signed_distance(b, x) == b.sdf(x)
