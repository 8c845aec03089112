import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnlab import (Ball, BoundaryData, GridFunction, OperatorSpec, Problem, build_grid,
                   discretize, power)
from fnlab import analysis as A
from fnlab.config import parse_domain
from fnlab.degeneracy import double_phase

S = np.linspace(-1, 1, 17)
PTS = np.stack(np.meshgrid(S, S, indexing="ij"), -1).reshape(-1, 2)


# ---------------------------------------------------------------- contact set

def test_contact_set_concave_function_is_everywhere():
    v = -np.sum(PTS ** 2, axis=1)
    cs = A.upper_contact_set(v, points=PTS)
    assert cs.mask.all()
    # the supporting slope is a supergradient of the lattice hull: within one
    # lattice step of the gradient -2x
    assert np.abs(cs.slopes + 2 * PTS).max() <= 2 * (S[1] - S[0]) + 1e-12
    assert A.verify_contact_set(cs, v, points=PTS) == 0


def test_contact_set_convex_function_is_the_corners():
    v = np.sum(PTS ** 2, axis=1)
    cs = A.upper_contact_set(v, points=PTS)
    assert cs.count == 4
    assert np.all(np.abs(PTS[cs.mask]) == 1)


def test_contact_set_affine_and_slope_bound():
    v = 0.5 + PTS @ [2.0, -1.0]
    cs = A.upper_contact_set(v, points=PTS)
    assert cs.mask.all() and np.allclose(cs.slopes, [2.0, -1.0])
    assert not A.upper_contact_set(v, points=PTS, R=1.0).mask.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_contact_set_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    v = A._random_smooth(rng, terms=5, freq=5.0)(PTS) - rng.uniform(0, 1) * np.sum(PTS ** 2, 1)
    cs = A.upper_contact_set(v, points=PTS)
    assert np.array_equal(cs.mask, A.contact_set_bruteforce(PTS, v))
    assert A.verify_contact_set(cs, v, points=PTS) == 0


# ---------------------------------------------------------------- ABP

def test_abp_constant_for_quadratic_profile():
    # sup|u| = 1/4, contact set of u^+ = 0 is everything, |f| = 1 on area pi
    grid = build_grid(Ball(), 1 / 64)
    u = GridFunction.from_function(grid, lambda x: (np.sum(x * x, -1) - 1) / 4)
    rep = A.abp_verify(u, BoundaryData(lambda x: 0 * x[..., 0]), 1.0, power(0))
    assert rep.f_norm == pytest.approx(np.sqrt(np.pi), rel=0.01)
    assert rep.constant_fit == pytest.approx(0.25 / (2 * (np.sqrt(np.pi) + 1)), rel=0.01)
    assert rep.rhs == pytest.approx(rep.lhs)


def test_abp_factor_uses_both_indices():
    grid = build_grid(Ball(), 1 / 16)
    u = GridFunction.from_function(grid, lambda x: -np.ones(x.shape[:-1]))
    law = double_phase(1.0, 3.0)
    rep = A.abp_verify(u, BoundaryData(lambda x: 0 * x[..., 0]), 2.0, law)
    N = rep.f_norm
    assert rep.factor == pytest.approx(2 * (max(N ** 0.5, N ** 0.25) + 1))


def test_spread_and_scaling_exponent():
    assert A.relative_spread([1.0, 0.9, 0.95]) == pytest.approx(0.1)
    assert A.relative_spread([0.0, 0.0]) == 0.0
    f = np.array([1.0, 4.0, 16.0])
    assert A.scaling_exponent(f, 2 * f ** (1 / 3)) == pytest.approx(1 / 3)


# ---------------------------------------------------------------- barriers

def test_barrier_w_value_and_gradient():
    dom = Ball()
    y = np.array([0.95, 0.0])
    b = A.barrier_w(dom, 0.1, 0.5, 0.9, y, K=1.0)
    d = 0.05
    assert b.w == pytest.approx(20 * d / (1 + d ** 0.5) + (0.95 - 0.9) ** 3 / 0.1 ** 3)
    # finite-difference gradient
    e = 1e-6
    bp = A.barrier_w(dom, 0.1, 0.5, 0.9, y + [e, 0], K=1.0).w
    bm = A.barrier_w(dom, 0.1, 0.5, 0.9, y - [e, 0], K=1.0).w
    assert b.grad[0] == pytest.approx((bp - bm) / (2 * e), rel=1e-5)
    with pytest.raises(ValueError):
        # outside the strip where the distance is smooth
        A.barrier_w(Ball((0, 0), 0.2), 0.1, 0.5, 0.9, np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        A.barrier_w(dom, 0.1, 1.5, 0.9, y)


def test_barrier_w_hessian_bound():
    # numerical P+(D^2 w) at points with |y| < r and d >= delta/4 stays below the stated bound
    dom = Ball()
    delta, gamma, r = 0.05, 0.5, 0.9
    e = 1e-4
    K = A.distance_hessian_bound(dom, 0.45)
    # curvature of the distance at depth t is 1/(1-t); deepest sample is 0.95 of the width
    assert K == pytest.approx(1 / (1 - 0.95 * 0.45), rel=0.02)
    for y in ([0.0, 0.985], [0.98, 0.0], [0.6, 0.6]):
        y = np.asarray(y)
        w = lambda z: A.barrier_w(dom, delta, gamma, r, z, K=K).w
        H = np.empty((2, 2))
        for a in range(2):
            for c in range(2):
                ea, ec = np.eye(2)[a] * e, np.eye(2)[c] * e
                H[a, c] = (w(y + ea + ec) - w(y + ea - ec) - w(y - ea + ec) + w(y - ea - ec)) / (4 * e * e)
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        pplus = ev[ev > 0].sum() + ev[ev < 0].sum()
        d = 1 - np.linalg.norm(y)
        if delta / 4 <= d <= delta:
            assert pplus <= A.barrier_w(dom, delta, gamma, r, y, K=K).pucci_bound + 1e-6


def test_barrier_delta0_is_dyadic_and_admissible():
    law = power(1)
    delta = A.barrier_delta0(law, 1.0, 1.0, 0.01, 0.5, 0.5, 1.0)
    top = min(0.25, (1 - 0.5) / 12)
    k = np.log2(top / delta)
    assert k == pytest.approx(round(k)) and k >= 0
    assert delta <= (1 - 0.5) / 12


def test_distance_check_on_exact_profile():
    grid = build_grid(Ball(), 1 / 32)
    u = GridFunction.from_function(grid, lambda x: (np.sum(x * x, -1) - 1) / 4)
    g = BoundaryData(lambda x: 0 * x[..., 0])
    z = np.array([1.0, 0.0])
    ok = A.barrier_distance_check(u, g, Ball(), 0.5, 0.5, (z, 0.5))
    assert ok.passed and ok.nodes > 0
    # |u| ~ d/2 near the boundary, which exceeds (6/delta) d once delta > 12
    bad = A.barrier_distance_check(u, g, Ball(), 50.0, 0.5, (z, 0.5))
    assert not bad.passed


# ---------------------------------------------------------------- comparison

def test_comparison_random_pairs_and_broken_premise():
    p = Problem(Ball(), OperatorSpec.pucci("-", 1.0, 2.0), power(2), 1.0, 0.0)
    grid = build_grid(p.domain, 1 / 16)
    disc = discretize(grid, p.boundary, p.operator, p.law)
    rng = np.random.default_rng(11)
    for _ in range(10):
        v, w, bv, bw = A.random_proper_pair(p, grid, 1e-2, rng, disc=disc)
        rep = A.comparison_verify(v, w, p, eps=1e-2, bv=bv, bw=bw, disc=disc)
        assert rep.passed
        # swapping the roles breaks the premise, which is reported rather than counted
        swapped = A.comparison_verify(w, v, p, eps=1e-2, bv=bw, bw=bv, disc=disc)
        assert not swapped.premise_ok and swapped.violations == 0


def test_comparison_modes():
    p = Problem(Ball(), OperatorSpec.laplacian(), power(0), 1.0, 0.0)
    grid = build_grid(p.domain, 1 / 16)
    u = GridFunction.from_function(grid, lambda x: (np.sum(x * x, -1) - 1) / 4)
    rep = A.comparison_verify(u, u, p, mode="smooth-super", f1=2.0, f2=1.0)
    assert not rep.premise_ok
    with pytest.raises(ValueError):
        A.comparison_verify(u, u, p, mode="epsilon-proper", eps=0.0)
    with pytest.raises(ValueError):
        A.comparison_verify(u, u, p, mode="other")


# ---------------------------------------------------------------- smallness

def test_smallness_rescale_bounds():
    grid = build_grid(Ball(), 1 / 32)
    u = GridFunction.from_function(grid, lambda x: np.linalg.norm(x, axis=-1) ** 3)
    law = power(-0.5)
    g = BoundaryData(lambda x: np.ones(x.shape[:-1]))
    sm = A.smallness_rescale(u, 3 * np.sqrt(3), g, law, 0.01, x0=np.array([0.5, 0.0]))
    assert sm.ok
    assert sm.r == pytest.approx(0.01 ** (1 / 1.5))
    # constant g has C^(1,beta) norm 1; ((L/nu0) |f|)^(1/(1+i)) = 27
    u_sup = np.abs(u.interior).max()
    assert sm.K == pytest.approx(2 * (1 + u_sup + 1 + 27), rel=1e-6)
    # rescaled law is normalized at t = 1
    assert sm.law(np.zeros(2), 1.0) == pytest.approx(1.0)
    assert sm.g(np.zeros(2)) == pytest.approx(1 / sm.K)
    with pytest.raises(ValueError):
        A.smallness_rescale(u, 1.0, g, law, 1.5)


# ---------------------------------------------------------------- exponents and fits

@pytest.mark.parametrize("law, beta, alpha_bar, amax, attained", [
    (power(2), 0.999, 0.999, 1 / 3, True),
    (power(2), 0.3, None, 0.3, False),
    (power(-0.5), 0.9, 0.99, 0.9, False),
    (double_phase(-0.5, 1.0), 0.999, 0.99, 0.4, True),
    (double_phase(0.5, 1.0), 0.999, 0.6, 0.5, True),
    (power(0), 0.6, 0.99, 0.6, False),
])
def test_alpha_admissible(law, beta, alpha_bar, amax, attained):
    tgt = A.alpha_admissible(law, beta, alpha_bar)
    assert tgt.alpha_max == pytest.approx(amax)
    assert tgt.attained is attained
    assert tgt.alpha_bar_binding is (alpha_bar is not None)


def test_affine_fit_recovers_power_profile():
    # |x|^(1+a) around the origin: sup error of the best affine fit scales like rho^(k(1+a))
    s = np.linspace(-1, 1, 257)
    P = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    for a in (1 / 3, 0.6):
        v = np.linalg.norm(P, axis=1) ** (1 + a)
        tr = A.affine_fit_sequence(v, (0.0, 0.0), 0.5, 4, points=P)
        assert tr.alpha == pytest.approx(a, abs=0.02)
        assert np.all(np.diff(tr.errors) < 0)


def test_affine_fit_window_guard():
    grid = build_grid(parse_domain("halfgraph(0, 1)"), 1 / 32)
    u = GridFunction.from_function(grid, lambda x: np.linalg.norm(x, axis=-1) ** (4 / 3))
    with pytest.raises(ValueError):
        A.affine_fit_sequence(u, (0.0, 0.0), 0.5, 4)
    tr = A.affine_fit_sequence(u, (0.0, 0.0), 0.5, 2)
    assert tr.radii.tolist() == [0.5, 0.25]


def test_affine_fit_smooth_function_hits_cap():
    v = 1 + PTS @ [1.0, 2.0]
    tr = A.affine_fit_sequence(v, (0.0, 0.0), 0.5, 2, alpha_cap=0.8, points=PTS)
    assert tr.alpha == 0.8


def test_lipschitz_estimate():
    grid = build_grid(Ball(), 1 / 32)
    u = GridFunction.from_function(grid, lambda x: np.abs(x[..., 0]))
    assert A.lipschitz_estimate(u) == pytest.approx(1.0)
    x = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0]])
    assert A.lipschitz_estimate([0.0, 0.3, 0.0], radius=1.0, points=x) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        A.lipschitz_estimate([0.0, 1.0], points=x[:2])


def test_modulus_omega():
    # s0 = (2/(3*2))^2 = 1/9, value there 1/9 - 2/27 = 1/27
    assert A.modulus_omega(np.array([0.0, 1 / 9, 1.0]), 2.0).tolist() == \
        pytest.approx([0.0, 1 / 27, 1 / 27])
    s = np.linspace(0, 1 / 9, 50)
    assert np.all(np.diff(A.modulus_omega(s, 2.0)) >= 0)
    with pytest.raises(ValueError):
        A.modulus_omega(1.0, 0.0)
