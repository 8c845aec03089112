"""
Numerical checks of the a priori estimates on computed or analytic functions.

Contact sets, the sup-norm (ABP) bound, boundary barriers and the
distance estimate, comparison of sub/supersolution pairs, the smallness
rescaling, admissible Hoelder exponents, affine approximation rates and
Lipschitz quotients.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import _kernels as K
from .degeneracy import phi_eval, rescale_smallness
from .geometry import BoundaryData, GridFunction, ball_condition_radius, boundary_norm
from .scheme import SchemeParams, Stencil, discretize, residual


def _nodes(u, points=None):
    """(points, values) of the interior nodes of a grid function, or of explicit arrays."""
    if isinstance(u, GridFunction):
        return u.grid.interior, u.interior
    if points is None:
        raise ValueError("plain value arrays need their points")
    return np.asarray(points, dtype=float), np.asarray(u, dtype=float)


# ---------------------------------------------------------------- contact set

@dataclass
class ContactSet:
    """
    Upper contact set of a node function.

    Attributes
    ----------
    mask : ndarray of bool
        Flagged nodes.
    slopes : ndarray, shape (N, 2)
        A supporting slope at flagged nodes (the least-norm one among the
        envelope's active pieces); NaN elsewhere.
    gap : ndarray
        Concave envelope minus the function, >= 0.
    R : float or None
        Slope bound, when the restricted set was requested.
    """

    mask: np.ndarray
    slopes: np.ndarray
    gap: np.ndarray
    R: float = None

    @property
    def count(self):
        return int(self.mask.sum())


def _min_norm_in_hull(P):
    """Least-norm point of the convex hull of the rows of P (2D)."""
    if len(P) == 1:
        return P[0]
    if len(P) >= 3:
        # 0 in the hull: feasibility of sum l_j P_j = 0, sum l_j = 1, l >= 0
        A = np.vstack([P.T, np.ones(len(P))])
        res = linprog(np.zeros(len(P)), A_eq=A, b_eq=[0.0, 0.0, 1.0], bounds=(0, None),
                      method="highs")
        if res.status == 0:
            return np.zeros(2)
    best = P[np.argmin(np.linalg.norm(P, axis=1))]
    for a in range(len(P)):
        for b in range(a + 1, len(P)):
            d = P[b] - P[a]
            dd = d @ d
            if dd == 0:
                continue
            q = P[a] + np.clip(-(P[a] @ d) / dd, 0.0, 1.0) * d
            if q @ q < best @ best:
                best = q
    return best


def upper_contact_set(u, grid=None, R=None, points=None, tol=1e-10, chunk=512):
    """
    Nodes where a plane from above touches ``u`` over the whole node set.

    The concave envelope of the node values is the lower boundary of the
    upper hull of the lifted points (x, u(x)); it is the pointwise minimum
    of the upper facet planes.  A node is flagged when the envelope exceeds
    u by at most ``tol * max(1, max|u|)``.  With ``R`` the slope must also
    satisfy |p| <= R.

    Parameters
    ----------
    u : GridFunction or ndarray
        A grid function (its interior nodes are used) or plain values.
    grid : Grid, optional
        Unused; accepted for symmetry with the other checks.
    R : float, optional
        Slope bound.
    points : ndarray, shape (N, 2), optional
        Node coordinates when ``u`` is a plain array.
    """
    x, v = _nodes(u, points)
    N = len(v)
    scale = max(1.0, float(np.abs(v).max())) if N else 1.0
    thr = tol * scale
    lifted = np.column_stack([x, v])
    try:
        eq = ConvexHull(lifted).equations
    except QhullError:
        # flat lifted set: u is affine on the nodes
        A = np.column_stack([x, np.ones(N)])
        coef, *_ = np.linalg.lstsq(A, v, rcond=None)
        if np.abs(A @ coef - v).max() > thr:
            raise
        mask = np.ones(N, dtype=bool)
        slopes = np.tile(coef[:2], (N, 1))
        if R is not None and np.linalg.norm(coef[:2]) > R:
            mask[:] = False
            slopes[:] = np.nan
        return ContactSet(mask, slopes, np.zeros(N), R)
    up = eq[eq[:, 2] > 1e-12]
    # plane z = a.x + b of each upper facet
    a = -up[:, :2] / up[:, 2:3]
    b = -up[:, 3] / up[:, 2]
    env = np.empty(N)
    for lo in range(0, N, chunk):
        env[lo:lo + chunk] = (x[lo:lo + chunk] @ a.T + b).min(axis=1)
    gap = np.maximum(env - v, 0.0)
    mask = gap <= thr
    slopes = np.full((N, 2), np.nan)
    for i in np.flatnonzero(mask):
        active = np.abs(x[i] @ a.T + b - v[i]) <= thr + 1e-12 * scale
        P = np.unique(np.round(a[active], 12), axis=0) if active.any() else a[[np.argmin(x[i] @ a.T + b)]]
        p = _min_norm_in_hull(P)
        if R is not None and np.linalg.norm(p) > R:
            mask[i] = False
            continue
        slopes[i] = p
    return ContactSet(mask, slopes, gap, R)


def contact_set_bruteforce(points, values, tol=1e-10, seed=0):
    """
    Oracle straight from the definition: for each node x decide whether
    some p satisfies u(y) <= u(x) + p.(y - x) + tol*scale for every node y
    (a two-variable linear feasibility problem, solved exactly by the
    randomized incremental method).  O(N^2) expected work.
    """
    x = np.ascontiguousarray(points, dtype=float)
    v = np.ascontiguousarray(values, dtype=float)
    scale = max(1.0, float(np.abs(v).max()))
    order = np.random.default_rng(seed).permutation(len(v))
    span = float(np.ptp(x, axis=0).min()) or 1.0
    M = 1e6 * (1.0 + float(np.ptp(v))) / span
    return K.support_exists(x, v, tol * scale, order, M)


def verify_contact_set(cs, u, points=None, tol=1e-10):
    """Re-check each flagged node and its slope against every node y; returns the violation count."""
    x, v = _nodes(u, points)
    thr = tol * max(1.0, float(np.abs(v).max()))
    bad = 0
    for i in np.flatnonzero(cs.mask):
        if np.max(v - v[i] - (x - x[i]) @ cs.slopes[i]) > thr:
            bad += 1
    return bad


# ---------------------------------------------------------------- ABP

@dataclass
class ABPReport:
    """sup|u| against ||g||_inf + c diam (max(N^(1/(1+i)), N^(1/(1+s))) + 1), N the L^n norm of f on the contact set."""

    lhs: float
    g_sup: float
    f_norm: float
    factor: float
    constant_fit: float
    contact_nodes: int

    @property
    def rhs(self):
        return self.g_sup + self.constant_fit * self.factor


def abp_verify(u, g, f, law, e=None, dom=None, n=2):
    """
    Smallest constant c for which the sup-norm estimate holds on ``u``.

    ``f`` is evaluated at the interior nodes (constant, callable or array);
    its L^n norm is taken over the upper contact set of u^+ with cell area
    h^n.  ``g`` is a BoundaryData; its sup is sampled on the boundary.
    ``e`` is accepted for the record; the fitted constant absorbs it.
    """
    grid = u.grid
    dom = dom or grid.domain
    x, v = grid.interior, u.interior
    fv = _values_at(f, x)
    pts = dom.boundary_samples(max(256, int(4 * dom.perimeter() / grid.h)))[0]
    g_sup = float(np.abs(g(pts)).max())
    lhs = float(np.abs(v).max()) if len(v) else 0.0
    cs = upper_contact_set(np.maximum(v, 0.0), points=x)
    N = float((np.sum(np.abs(fv[cs.mask]) ** n) * grid.h ** n) ** (1.0 / n))
    factor = dom.diameter * (max(N ** (1.0 / (1 + law.i_phi)), N ** (1.0 / (1 + law.s_phi))) + 1.0)
    c = max(0.0, lhs - g_sup) / factor
    return ABPReport(lhs, g_sup, N, factor, c, cs.count)


def relative_spread(values):
    """(max - min) / max of nonnegative values; 0 when all vanish."""
    a = np.asarray(values, dtype=float)
    top = a.max()
    return 0.0 if top == 0 else float((top - a.min()) / top)


def scaling_exponent(factors, sups):
    """Slope of log sup|u| against log of the forcing factor."""
    return float(np.polyfit(np.log(factors), np.log(sups), 1)[0])


def _values_at(f, x):
    if callable(f):
        return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape[:-1]).copy()
    f = np.asarray(f, dtype=float)
    return np.full(x.shape[:-1], float(f)) if f.ndim == 0 else f


# ---------------------------------------------------------------- distance barrier

def distance_hessian_bound(dom, width, samples=256, step=1e-4):
    """Sampled bound K on |D^2 d| in the strip {0 < d < width}, by central differences of the signed distance."""
    pts, nrm, _, _ = dom.boundary_samples(samples)
    worst = 0.0
    e = np.eye(2) * step
    for t in np.linspace(0.05, 0.95, 7) * width:
        y = pts - t * nrm
        H = np.empty((len(y), 2, 2))
        for a in range(2):
            for b in range(2):
                H[:, a, b] = (dom.sdf(y + e[a] + e[b]) - dom.sdf(y + e[a] - e[b])
                              - dom.sdf(y - e[a] + e[b]) + dom.sdf(y - e[a] - e[b])) / (4 * step ** 2)
        worst = max(worst, float(np.abs(np.linalg.eigvalsh(H)).max()))
    return worst


@dataclass
class BarrierValue:
    w: float
    grad: np.ndarray
    pucci_bound: float


def barrier_w(dom, delta, gamma, r, y, center=None, lam=1.0, Lam=1.0, K=None, n=2):
    """
    The boundary barrier (2/delta) d/(1 + d^gamma), plus (|y|-r)^3/(1-r)^3
    for |y| >= r, with d the distance to the boundary and |y| measured from
    ``center`` (default the origin).

    Returns the value, the gradient and the upper bound
    -2 gamma delta^(gamma-2) lam (1+gamma)/(1+delta^gamma)^3
    + (2/delta) n K Lam + 6 n Lam / (1-r)^2 on P+(D^2 w), with K the
    curvature bound of the distance (measured when not given).
    """
    if not 0 < gamma < 1:
        raise ValueError("need 0 < gamma < 1")
    if not 0 < delta < 1:
        raise ValueError("need 0 < delta < 1")
    if not 0 < r < 1:
        raise ValueError("need 0 < r < 1")
    y = np.asarray(y, dtype=float)
    strip = ball_condition_radius(dom)
    d = -float(dom.sdf(y[None])[0])
    if not 0 <= d < strip:
        raise ValueError(f"point outside the C^2 strip 0 <= d < {strip:.3g}")
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    ry = float(np.linalg.norm(y - c))
    dg = d ** gamma
    w = 2.0 / delta * d / (1.0 + dg)
    foot = dom.project(y[None])[0]
    Dd = (y - foot) / d if d > 0 else -_outward(dom, foot)
    grad = 2.0 / delta * (1.0 + (1.0 - gamma) * dg) / (1.0 + dg) ** 2 * Dd
    if ry >= r:
        w += (ry - r) ** 3 / (1.0 - r) ** 3
        if ry > 0:
            grad = grad + (y - c) / ry * 3.0 * (ry - r) ** 2 / (1.0 - r) ** 3
    if K is None:
        K = distance_hessian_bound(dom, min(strip, 0.5) * 0.9)
    bound = (-2 * gamma * delta ** (gamma - 2) * lam * (1 + gamma) / (1 + delta ** gamma) ** 3
             + 2.0 / delta * n * K * Lam + 6 * n * Lam / (1 - r) ** 2)
    return BarrierValue(float(w), grad, float(bound))


def _outward(dom, z, step=1e-7):
    e = np.eye(2) * step
    g = np.array([(dom.sdf(z[None] + e[k]) - dom.sdf(z[None] - e[k]))[0] / (2 * step)
                  for k in range(2)])
    return g / np.linalg.norm(g)


def barrier_delta0(law, lam, Lam, f_sup, r, gamma, K, n=2, start=0.25):
    """
    Largest dyadic delta <= min(start, (1-r)/12) for which the barrier's
    Pucci bound B satisfies (nu0/L) t^i B < -f_sup - 1 for every gradient
    size t in [1/(4 delta), 3/delta].
    """
    delta = min(start, (1 - r) / 12)
    for _ in range(60):
        B = (-2 * gamma * delta ** (gamma - 2) * lam * (1 + gamma) / (1 + delta ** gamma) ** 3
             + 2.0 / delta * n * K * Lam + 6 * n * Lam / (1 - r) ** 2)
        if B < 0:
            i = law.i_phi
            t = 1.0 / (4 * delta) if i >= 0 else 3.0 / delta
            if law.nu0 / law.L * t ** i * B < -f_sup - 1:
                return delta
        delta /= 2
    raise RuntimeError("no admissible delta found")


@dataclass
class DistanceCheck:
    nodes: int
    violations: int
    max_violation: float

    @property
    def passed(self):
        return self.violations == 0


def barrier_distance_check(u, g, dom, delta, gamma, region, scale=(1.0, 1.0), tol=1e-12):
    """
    Check |u(y) - g(y')| <= (6/delta) d/(1 + d^gamma) at the nodes of a region.

    ``region`` is ``(center, radius)``.  With ``scale=(K, r)`` the check is
    made for the rescaled function (u - g)/K in coordinates (x - center)/r,
    so ``radius`` and ``d`` are in rescaled units.  ``y'`` is the nearest
    boundary point.
    """
    Ks, rs = scale
    center, radius = region
    x = u.grid.interior
    keep = np.linalg.norm(x - np.asarray(center, dtype=float), axis=1) < radius * rs
    x, v = x[keep], u.interior[keep]
    d = -dom.sdf(x) / rs
    lhs = np.abs(v - g(dom.project(x))) / Ks
    rhs = 6.0 / delta * d / (1.0 + np.maximum(d, 0.0) ** gamma)
    ex = lhs - rhs
    bad = ex > tol
    return DistanceCheck(int(len(x)), int(bad.sum()), float(ex.max()) if len(x) else 0.0)


# ---------------------------------------------------------------- comparison

@dataclass
class ComparisonReport:
    premise_ok: bool
    premise: str
    max_excess: float
    violations: int

    @property
    def passed(self):
        return self.premise_ok and self.violations == 0


def comparison_verify(v, w, problem, mode="epsilon-proper", eps=1e-3, eta=None, f1=None, f2=None,
                      bv=None, bw=None, tol=1e-8, premise_tol=0.0, disc=None, reach=2):
    """
    Check v <= w + tol at the interior nodes after verifying the premise.

    Premise: residual(v) >= -premise_tol with forcing ``f1`` and boundary
    data ``bv``, residual(w) <= premise_tol with ``f2`` and ``bw`` (all
    default to the problem's), and bv <= bw + tol at the boundary points of
    the stencil.  Mode ``smooth-super`` uses eps = 0 and needs f1 > f2
    strictly; mode ``epsilon-proper`` uses the given eps > 0.
    """
    grid = v.grid
    x = grid.interior
    base = problem.forcing(x)
    fa = base if f1 is None else _values_at(f1, x)
    fb = base if f2 is None else _values_at(f2, x)
    if mode == "smooth-super":
        eps = 0.0
        if not np.all(fa > fb):
            return ComparisonReport(False, "forcings are not strictly ordered", np.nan, 0)
    elif mode == "epsilon-proper":
        if not eps > 0:
            raise ValueError("epsilon-proper mode needs eps > 0")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if disc is None:
        disc = discretize(grid, problem.boundary, problem.operator, problem.law, Stencil(reach))
    bv = bv or problem.boundary
    bw = bw or problem.boundary
    params = SchemeParams(eta=eta or 1e-6 * grid.h, epsilon=eps, stencil=Stencil(reach))
    pts, _ = disc.boundary_points()
    if len(pts) and np.max(bv(pts) - bw(pts)) > tol:
        return ComparisonReport(False, "v > w on the boundary", np.nan, 0)
    Rv = residual(disc.with_boundary(bv), v, fa, problem.xi, params)
    Rw = residual(disc.with_boundary(bw), w, fb, problem.xi, params)
    if Rv.min() < -premise_tol:
        return ComparisonReport(False, f"v is not a subsolution (min residual {Rv.min():.3g})",
                                np.nan, 0)
    if Rw.max() > premise_tol:
        return ComparisonReport(False, f"w is not a supersolution (max residual {Rw.max():.3g})",
                                np.nan, 0)
    ex = v.interior - w.interior
    return ComparisonReport(True, "ok", float(ex.max()), int(np.sum(ex > tol)))


def _random_smooth(rng, terms=4, freq=3.0):
    c = rng.normal(size=terms) / terms
    om = rng.uniform(-freq, freq, size=(terms, 2))
    th = rng.uniform(0, 2 * np.pi, size=terms)
    a0 = rng.normal()

    def fn(x):
        x = np.asarray(x, dtype=float)
        return a0 + np.sum(c * np.sin(x @ om.T + th), axis=-1)

    return fn


def random_proper_pair(problem, grid, eps, rng, disc=None, eta=None, reach=2):
    """
    A random discrete subsolution/supersolution pair for the eps-problem.

    Two random trigonometric sums are shifted by the smallest constants
    making them a sub- and a supersolution (the residual moves by eps per
    unit shift), then w is lifted until it dominates v on the boundary.
    Returns ``(v, w, bv, bw)``: grid functions and their boundary data.
    """
    if disc is None:
        disc = discretize(grid, problem.boundary, problem.operator, problem.law, Stencil(reach))
    params = SchemeParams(eta=eta or 1e-6 * grid.h, epsilon=eps, stencil=Stencil(reach))
    x = grid.interior
    fv = problem.forcing(x)
    p1, p2 = _random_smooth(rng), _random_smooth(rng)
    r1 = residual(disc.with_boundary(BoundaryData(p1)), p1(x), fv, problem.xi, params)
    r2 = residual(disc.with_boundary(BoundaryData(p2)), p2(x), fv, problem.xi, params)
    c1 = max(0.0, float(np.max(-r1)) / eps) * (1 + 1e-9) + 1e-12
    c2 = max(0.0, float(np.max(r2)) / eps) * (1 + 1e-9) + 1e-12
    # the shifted differences carry roundoff of order |c| / h^2; re-check and nudge
    for _ in range(8):
        s1 = residual(disc.with_boundary(BoundaryData(lambda y: p1(y) - c1)), p1(x) - c1, fv,
                      problem.xi, params).min()
        s2 = residual(disc.with_boundary(BoundaryData(lambda y: p2(y) + c2)), p2(x) + c2, fv,
                      problem.xi, params).max()
        if s1 >= 0 and s2 <= 0:
            break
        c1 += 2 * max(0.0, -s1) / eps
        c2 += 2 * max(0.0, s2) / eps
    pts, _ = disc.boundary_points()
    lift = max(0.0, float(np.max(p1(pts) - c1 - p2(pts) - c2))) if len(pts) else 0.0

    def V(y):
        return p1(y) - c1

    def W(y):
        return p2(y) + c2 + lift

    return (GridFunction.from_function(grid, V), GridFunction.from_function(grid, W),
            BoundaryData(V), BoundaryData(W))


# ---------------------------------------------------------------- smallness

@dataclass
class Rescaled:
    """
    Output of :func:`smallness_rescale`.

    ``points`` are rescaled node coordinates (x - x0)/r, ``u``/``f`` the
    rescaled values there; ``g`` and ``law`` are the rescaled data.
    """

    K: float
    r: float
    x0: np.ndarray
    points: np.ndarray
    u: np.ndarray
    f: np.ndarray
    g: object
    law: object
    u_sup: float
    f_sup: float
    eps0: float
    ball_nodes: int = 0

    @property
    def ok(self):
        return self.u_sup <= 1.0 and self.f_sup <= self.eps0


def smallness_rescale(u, f, g, law, eps0, x0=None, dom=None):
    """
    Rescale u(x) -> u(x0 + r y)/K with

        K = 2 (1 + ||u||_inf + ||g||_{C^{1,beta_g}} + ((L/nu0) ||f||_inf)^(1/(1+i)))
        r = eps0^(1/(2+i))

    and f -> r^2 f(x0 + r y) / (K Phi(x0 + r y, K/r)).  The bounds
    ||u_bar|| <= 1 and ||f_bar|| <= eps0 are evaluated on every interior
    node, a superset of the rescaled unit ball around ``x0`` (default the
    origin); on coarse grids that ball may hold no node at all.
    ``ball_nodes`` counts the nodes inside it.
    """
    if not 0 < eps0 < 1:
        raise ValueError("need 0 < eps0 < 1")
    grid = u.grid
    dom = dom or grid.domain
    x0 = np.zeros(2) if x0 is None else np.asarray(x0, dtype=float)
    i = law.i_phi
    x = grid.interior
    fv = _values_at(f, x)
    u_sup = float(np.abs(u.interior).max()) if len(x) else 0.0
    f_sup = float(np.abs(fv).max()) if len(x) else 0.0
    K = 2.0 * (1.0 + u_sup + boundary_norm(g, dom) + (law.L / law.nu0 * f_sup) ** (1.0 / (1 + i)))
    r = eps0 ** (1.0 / (2 + i))
    y = (x - x0) / r
    ball = np.linalg.norm(y, axis=1) < 1.0
    ub = u.interior / K
    norm = phi_eval(law, x, np.full(len(x), K / r))
    fb = r ** 2 * fv / (K * norm)
    gb = _ScaledBoundary(g, x0, r, K)
    lb = rescale_smallness(law, x0, r, K)
    return Rescaled(K, r, x0, y, ub, fb, gb, lb, float(np.abs(ub).max()),
                    float(np.abs(fb).max()), eps0, int(ball.sum()))


class _ScaledBoundary:
    def __init__(self, g, x0, r, K):
        self.g, self.x0, self.r, self.K = g, x0, r, K

    def __call__(self, y):
        return self.g(self.x0 + self.r * np.asarray(y, dtype=float)) / self.K


# ---------------------------------------------------------------- exponents

@dataclass
class RegularityTarget:
    """
    Admissible Hoelder exponents for the gradient.

    ``alpha_bar_binding`` is False when ``alpha_bar`` is the default
    placeholder (its value is not computable from the ellipticity pair).
    """

    alpha_bar: float
    alpha_max: float
    attained: bool
    alpha_bar_binding: bool = True
    bounds: dict = field(default_factory=dict)


def alpha_admissible(law, beta_g, alpha_bar=None):
    """
    Supremum of (0, alpha_bar) n (0, 1/(1+s-min(i,0))] n (0, beta_g) and
    whether it is attained (only the closed middle bracket can bind).
    """
    if not 0 < beta_g < 1:
        raise ValueError("beta_g must lie in (0, 1)")
    binding = alpha_bar is not None
    alpha_bar = 0.99 if alpha_bar is None else float(alpha_bar)
    if not 0 < alpha_bar <= 1:
        raise ValueError("alpha_bar must lie in (0, 1]")
    i, s = law.i_phi, law.s_phi
    cap = 1.0 / (1.0 + s) if i >= 0 else 1.0 / (1.0 + s - i)
    amax = min(alpha_bar, cap, beta_g)
    attained = cap < alpha_bar and cap < beta_g
    return RegularityTarget(alpha_bar, float(amax), bool(attained), binding,
                            {"alpha_bar": alpha_bar, "structure": cap, "beta_g": beta_g})


@dataclass
class AffineTracker:
    """Least-squares affine fits l_k = a_k + b_k.(y - center) on shrinking balls."""

    radii: np.ndarray
    a: np.ndarray
    b: np.ndarray
    errors: np.ndarray
    alpha: float
    C0: float


def affine_fit_sequence(u, center, rho, k_max, alpha_cap=1.0, points=None, dom=None, h=None):
    """
    Fit affine functions on B_{rho^k}(center) n closure(Omega), k = 1..k_max.

    e_k is the sup of |u - l_k| over the ball nodes; alpha comes from the
    least-squares slope of log e_k against log rho^k, minus one, capped at
    ``alpha_cap`` (a vanishing error sequence gives the cap).  C0 is the
    smallest constant with |b_k - b_{k-1}| <= C0 rho^((k-1) alpha).

    For a GridFunction the nodes are its interior nodes plus active nodes
    on the boundary.
    """
    if not 0 < rho < 1:
        raise ValueError("need 0 < rho < 1")
    if int(k_max) != k_max or k_max < 1:
        raise ValueError("k_max must be a positive integer")
    if isinstance(u, GridFunction):
        grid = u.grid
        h = grid.h
        dom = dom or grid.domain
        inside = np.arange(grid.n_active) < grid.n_interior
        inside |= np.abs(grid.sd) <= 1e-12
        x, v = grid.points[inside], u.values[inside]
    else:
        x, v = _nodes(u, points)
    if h is not None and rho ** k_max < 4 * h:
        raise ValueError(f"rho^k_max = {rho ** k_max:.3g} is below 4h = {4 * h:.3g}")
    c = np.asarray(center, dtype=float)
    dist = np.linalg.norm(x - c, axis=1)
    radii, A, B, E = [], [], [], []
    for k in range(1, k_max + 1):
        R = rho ** k
        m = dist <= R * (1 + 1e-12)
        if m.sum() < 3:
            raise ValueError(f"fewer than 3 nodes in the ball of radius {R:.3g}")
        M = np.column_stack([np.ones(m.sum()), x[m] - c])
        coef, *_ = np.linalg.lstsq(M, v[m], rcond=None)
        radii.append(R)
        A.append(coef[0])
        B.append(coef[1:])
        E.append(float(np.abs(M @ coef - v[m]).max()))
    radii, E = np.array(radii), np.array(E)
    scale = max(1.0, float(np.abs(v).max()))
    good = E > 1e-13 * scale
    if good.sum() >= 2:
        alpha = min(alpha_cap, float(np.polyfit(np.log(radii[good]), np.log(E[good]), 1)[0]) - 1.0)
    else:
        alpha = alpha_cap
    B = np.array(B)
    inc = np.linalg.norm(np.diff(B, axis=0), axis=1)
    C0 = float(np.max(inc / rho ** (np.arange(1, len(B)) * alpha))) if len(inc) else 0.0
    return AffineTracker(radii, np.array(A), B, E, float(alpha), C0)


def lipschitz_estimate(u, region=None, radius=None, points=None):
    """
    Largest |u(x) - u(y)|/|x - y| over node pairs in ``region`` closer than ``radius``.

    ``region`` is a boolean mask or a predicate on points; ``radius``
    defaults to 3h for grid functions.
    """
    x, v = _nodes(u, points)
    if radius is None:
        if not isinstance(u, GridFunction):
            raise ValueError("radius is required for plain arrays")
        radius = 3.0 * u.grid.h
    if region is not None:
        m = region(x) if callable(region) else np.asarray(region, dtype=bool)
        x, v = x[m], v[m]
    if len(x) < 2:
        return 0.0
    pairs = cKDTree(x).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return 0.0
    i, j = pairs[:, 0], pairs[:, 1]
    return float(np.max(np.abs(v[i] - v[j]) / np.linalg.norm(x[i] - x[j], axis=1)))


def modulus_omega(s, omega0):
    """s - omega0 s^(3/2) up to s0 = (2/(3 omega0))^2, constant beyond."""
    if not omega0 > 0:
        raise ValueError("need omega0 > 0")
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("need s >= 0")
    s0 = (2.0 / (3.0 * omega0)) ** 2
    t = np.minimum(s, s0)
    out = t - omega0 * t ** 1.5
    return out if out.ndim else float(out)
