"""
Monotone wide-stencil discretization of

    G_eps(x, u) = Phi(x, |xi + Du|) F(D^2 u) - f(x) - eps u.

Second derivatives are taken along lattice directions grouped into
orthogonal frames {(a, b), (-b, a)}.  Pucci operators take the max/min over
frames of eigenvalue-wise weighted second differences; linear operators
write A(x) as a nonnegative combination of the stencil's rank-one
matrices v v^T.  Arms that leave the domain are cut at the boundary and
use g there (unequal-arm three-point formula).

Phi is evaluated on an upwind gradient magnitude chosen per term from the
sign of F_h and the monotonicity of the term in t, which keeps the full
residual monotone in the stencil values.
"""

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.optimize import nnls

from . import _kernels as K
from .degeneracy import GradientShift
from .operators import INFSUP, LINEAR, PUCCI_PLUS, PUCCI_MINUS
from .geometry import GridFunction


@dataclass(frozen=True)
class Stencil:
    """
    Orthogonal lattice frames {(a, b), (-b, a)} with max(|a|, |b|) <= reach.

    reach 1 gives the axis and diagonal frames, reach 2 adds
    (2, 1) and (1, 2), and so on.  Frame 0 is always the axis frame.
    """

    reach: int = 2

    def __post_init__(self):
        if self.reach < 1:
            raise ValueError("reach must be >= 1")

    @property
    def frames(self):
        gens = []
        for a in range(1, self.reach + 1):
            for b in range(0, self.reach + 1):
                if gcd(a, b) == 1:
                    gens.append((a, b))
        gens.sort(key=lambda v: np.arctan2(v[1], v[0]))
        return [((a, b), (-b, a)) for a, b in gens]

    @property
    def directions(self):
        return np.array([v for fr in self.frames for v in fr], dtype=np.int64)

    @property
    def unit_directions(self):
        d = self.directions.astype(float)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @property
    def max_angle_gap(self):
        ang = np.sort([np.arctan2(v[1], v[0]) for v, _ in self.frames])
        gaps = np.diff(np.concatenate([ang, [ang[0] + np.pi / 2]]))
        return float(gaps.max())


@dataclass
class SchemeParams:
    """eta: gradient floor; epsilon: proper-term coefficient; gradient: 'upwind' or 'centered'."""

    eta: float = 1e-6
    epsilon: float = 0.0
    stencil: Stencil = field(default_factory=Stencil)
    gradient: str = "upwind"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.gradient not in ("upwind", "centered"):
            raise ValueError("gradient must be 'upwind' or 'centered'")


def _crossing(dom, x0, step, n_samp=16, iters=60):
    """
    First boundary crossing t in (0, 1] of x0 + t*step, or 2.0 if none.

    ``x0`` are interior points (sdf < 0).
    """
    ts = np.arange(1, n_samp + 1) / n_samp
    pts = x0[:, None, :] + ts[None, :, None] * step[:, None, :]
    d = dom.sdf(pts)
    out = d >= 0
    hit = out.any(axis=1)
    t = np.full(len(x0), 2.0)
    if not np.any(hit):
        return t
    first = np.argmax(out[hit], axis=1)
    hi = ts[first]
    lo = np.where(first > 0, ts[np.maximum(first - 1, 0)], 0.0)
    xs, st = x0[hit], step[hit]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = dom.sdf(xs + mid[:, None] * st) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    t[hit] = hi
    return t


def decompose_matrix(A, unit_dirs, frames_first=True, tol=1e-10):
    """
    Nonnegative weights w with A = sum_k w_k v_k v_k^T over unit directions.

    Tries single frames (pairs 2f, 2f+1) first so that axis-aligned or
    frame-aligned matrices use the narrowest stencil, then a full NNLS.
    """
    A = np.asarray(A, dtype=float)
    D = len(unit_dirs)
    scale = max(np.abs(A).max(), 1e-300)
    if frames_first:
        for f in range(D // 2):
            v1, v2 = unit_dirs[2 * f], unit_dirs[2 * f + 1]
            if abs(v1 @ A @ v2) <= tol * scale:
                w1, w2 = v1 @ A @ v1, v2 @ A @ v2
                if w1 >= -tol * scale and w2 >= -tol * scale:
                    w = np.zeros(D)
                    w[2 * f], w[2 * f + 1] = max(w1, 0.0), max(w2, 0.0)
                    return w
    rows = np.stack([unit_dirs[:, 0] ** 2, 2 * unit_dirs[:, 0] * unit_dirs[:, 1],
                     unit_dirs[:, 1] ** 2])
    rhs = np.array([A[0, 0], 2 * A[0, 1], A[1, 1]])
    w, res = nnls(rows, rhs)
    if res > 1e-9 * scale:
        raise ValueError("matrix is not a nonnegative combination of stencil directions; "
                         "increase the stencil reach")
    return w


@dataclass
class Discretization:
    """
    Precomputed stencil geometry and coefficient fields on a grid.

    Built once per (grid, boundary data, operator, law, stencil); the
    solver and the pointwise operations share it.
    """

    grid: object
    bd: object
    spec: object
    law: object
    stencil: Stencil
    nbr: np.ndarray
    arm: np.ndarray
    cw: np.ndarray
    gw: np.ndarray
    bval: np.ndarray
    cut: np.ndarray
    op_kind: int
    W: np.ndarray
    sup_mode: bool
    coef: np.ndarray
    expo: np.ndarray
    cmax: np.ndarray
    g0: np.ndarray

    @property
    def n(self):
        return self.grid.n_interior

    def boundary_points(self):
        """Cut-arm end points (on the boundary) and their g values."""
        mask = self.nbr < 0
        pts = self._arm_points()[mask]
        return pts, self.bval[mask]

    def _arm_points(self):
        dirs = self.stencil.directions.astype(float)
        unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        x = self.grid.interior
        plus = x[:, None, :] + self.arm[:, :, 0, None] * unit[None, :, :]
        minus = x[:, None, :] - self.arm[:, :, 1, None] * unit[None, :, :]
        return np.stack([plus, minus], axis=2)

    def with_law(self, law):
        coef, expo = _law_fields(law, self.grid.interior)
        return _replace(self, law=law, coef=coef, expo=expo)

    def with_boundary(self, bd):
        pts = self._arm_points()
        bval = np.where(self.nbr < 0, bd(pts), 0.0)
        return _replace(self, bd=bd, bval=np.ascontiguousarray(bval))

    def kernel_args(self, f, xi, params):
        xi = np.asarray(xi.vector if isinstance(xi, GradientShift) else xi, dtype=float)
        return (np.ascontiguousarray(f, dtype=float), self.nbr, self.cw, self.bval,
                self.gw, self.op_kind, float(self.spec.lam), float(self.spec.Lam), self.W,
                self.sup_mode, self.coef, self.expo, float(xi[0]), float(xi[1]),
                float(params.eta), float(params.epsilon),
                params.gradient == "upwind", self.cmax, self.g0)


def _replace(disc, **kw):
    from dataclasses import replace
    return replace(disc, **kw)


def _law_fields(law, pts):
    coef = np.stack([tm.coef_at(pts) for tm in law.terms]).astype(float)
    expo = np.stack([tm.expo_at(pts) for tm in law.terms]).astype(float)
    if np.any(coef < 0):
        raise ValueError("law coefficients must be nonnegative")
    return np.ascontiguousarray(coef), np.ascontiguousarray(expo)


def discretize(grid, bd, spec, law, stencil=None):
    """Build the :class:`Discretization` for a problem on ``grid``."""
    stencil = stencil or Stencil()
    dom = grid.domain
    h = grid.h
    dirs = stencil.directions
    unit = stencil.unit_directions
    D = len(dirs)
    N = grid.n_interior
    x = grid.interior
    ij = grid.ij[:N]
    nbr = -np.ones((N, D, 2), dtype=np.int64)
    arm = np.empty((N, D, 2))
    bval = np.zeros((N, D, 2))
    for s, sign in enumerate((1, -1)):
        for k in range(D):
            v = sign * dirs[k]
            length = h * np.hypot(*dirs[k])
            tgt = ij + v
            ok = ((tgt[:, 0] >= 0) & (tgt[:, 0] < grid.shape[0])
                  & (tgt[:, 1] >= 0) & (tgt[:, 1] < grid.shape[1]))
            if not np.all(ok):
                raise ValueError("stencil leaves the bounding box; enlarge the grid band")
            j = grid.index[tgt[:, 0], tgt[:, 1]]
            # only nodes near the boundary can have a cut arm
            near = grid.sd[:N] > -length * 1.0001
            t = np.full(N, 2.0)
            if np.any(near):
                t[near] = _crossing(dom, x[near], h * v[None, :].astype(float)
                                    * np.ones((near.sum(), 1)))
            cut = (t <= 1.0) | ~((j >= 0) & (j < N))
            # target outside but no sampled crossing: the end node sits on the boundary
            t = np.where(cut & (t > 1.0), 1.0, t)
            nbr[:, k, s] = np.where(cut, -1, j)
            arm[:, k, s] = np.where(cut, t * length, length)
            if np.any(cut):
                pts = x[cut] + (t[cut] * length)[:, None] * (sign * unit[k])[None, :]
                bval[cut, k, s] = bd(pts)
    cutmask = nbr < 0
    ap, am = arm[..., 0], arm[..., 1]
    cw = np.stack([2.0 / ((ap + am) * ap), 2.0 / ((ap + am) * am)], axis=-1)
    centre = (2.0 / (ap * am)).T
    if spec.kind in (PUCCI_PLUS, PUCCI_MINUS):
        op_kind = K.PUCCI_PLUS if spec.kind == PUCCI_PLUS else K.PUCCI_MINUS
        W = np.zeros((1, 1, 1))
        frame_sum = centre.reshape(D // 2, 2, N).sum(axis=1)
        cmax = spec.Lam * frame_sum.max(axis=0)
        sup_mode = True
    else:
        op_kind = K.LINEAR_FAMILY
        if spec.kind == LINEAR:
            if callable(spec.coeff):
                W = np.stack([decompose_matrix(spec.coefficient(xx), unit) for xx in x])[None]
            else:
                w = decompose_matrix(spec.coefficient(np.zeros(2)), unit)
                W = np.broadcast_to(w, (1, N, D)).copy()
            sup_mode = True
        elif spec.kind == INFSUP:
            W = np.stack([np.broadcast_to(decompose_matrix(A, unit), (N, D)) for A in spec.family])
            sup_mode = spec.mode == "sup"
        else:
            raise ValueError(f"unsupported operator kind {spec.kind!r}")
        cmax = np.einsum("mnk,kn->mn", W, centre).max(axis=0)
    coef, expo = _law_fields(law, x)
    ap2, am2 = ap[:, :2], am[:, :2]
    gw = np.stack([1.0 / ap2, 1.0 / am2, am2 / (ap2 * (ap2 + am2)),
                   ap2 / (am2 * (ap2 + am2))], axis=-1)
    g0 = np.sqrt(np.sum(1.0 / np.minimum(ap2, am2) ** 2, axis=1))
    return Discretization(grid, bd, spec, law, stencil, np.ascontiguousarray(nbr),
                          np.ascontiguousarray(arm), np.ascontiguousarray(cw),
                          np.ascontiguousarray(gw), np.ascontiguousarray(bval), cutmask,
                          op_kind, np.ascontiguousarray(W, dtype=float), sup_mode, coef, expo,
                          np.ascontiguousarray(cmax), np.ascontiguousarray(g0))


def _interior_values(u, disc):
    if isinstance(u, GridFunction):
        return np.ascontiguousarray(u.interior)
    u = np.asarray(u, dtype=float)
    if u.shape[0] == disc.grid.n_active:
        u = u[: disc.n]
    return np.ascontiguousarray(u)


def _node(disc, x):
    if np.ndim(x) == 0:
        i = int(x)
    else:
        i = disc.grid.node_at(*disc.grid.lattice(x))
    if not 0 <= i < disc.n:
        raise ValueError("point is not an interior node")
    return i


def second_difference(u, x, v, disc):
    """
    Second difference of ``u`` at interior node ``x`` along lattice direction ``v``.

    Approximates the second derivative along v/|v| with arms h*v, cut at
    the boundary where g is used.  ``v`` must be one of the stencil's
    directions (or its negative).
    """
    i = _node(disc, x)
    dirs = disc.stencil.directions
    v = np.asarray(v)
    match = np.flatnonzero(np.all(dirs == v, axis=1) | np.all(dirs == -v, axis=1))
    if len(match) == 0:
        raise ValueError(f"direction {tuple(v)} is not in the stencil")
    uu = _interior_values(u, disc)
    return float(K.second_diff(i, int(match[0]), uu, disc.nbr, disc.cw, disc.bval))


def discrete_F(u, x, disc):
    """F_h(u) at interior node ``x`` for the discretization's operator."""
    i = _node(disc, x)
    uu = _interior_values(u, disc)
    return float(K.discrete_operator(i, uu, disc.nbr, disc.cw, disc.bval, disc.op_kind,
                                     disc.spec.lam, disc.spec.Lam, disc.W, disc.sup_mode)[0])


def discrete_gradient(u, x, disc):
    """Centred gradient at interior node ``x`` (unequal arms near the boundary)."""
    i = _node(disc, x)
    uu = _interior_values(u, disc)
    g = np.empty(2)
    for k in range(2):
        up = uu[disc.nbr[i, k, 0]] if disc.nbr[i, k, 0] >= 0 else disc.bval[i, k, 0]
        um = uu[disc.nbr[i, k, 1]] if disc.nbr[i, k, 1] >= 0 else disc.bval[i, k, 1]
        w = disc.gw[i, k]
        g[k] = w[2] * (up - uu[i]) + w[3] * (uu[i] - um)
    return g


def residual_parts(disc, u, f, xi=None, params=None):
    """Residual, Phi values and pseudo-time diagonal at every interior node."""
    params = params or SchemeParams()
    xi = xi if xi is not None else GradientShift()
    uu = _interior_values(u, disc)
    fv = _interior_values(f, disc) if not np.isscalar(f) else np.full(disc.n, float(f))
    N = disc.n
    R, phi, diag = np.empty(N), np.empty(N), np.empty(N)
    e1, e3 = np.empty(0), np.empty((0, 0, 0))
    K.sweep(0, N, K.RESIDUAL, uu, *disc.kernel_args(fv, xi, params), 0.0, e1, e1,
            R, phi, diag, e1, e3, e1)
    return R, phi, diag


def residual(disc, u, f, xi=None, params=None):
    """
    Phi(x, max(|xi + D_h u|, eta)) F_h(u) - f - eps u at the interior nodes.

    ``u`` is a :class:`GridFunction` or an array of interior values; the
    boundary enters through the discretization's cut-arm values.
    """
    return residual_parts(disc, u, f, xi, params)[0]


@dataclass
class MonotonicityReport:
    trials: int
    violations: int
    center_violations: int
    worst: float

    @property
    def ok(self):
        return self.violations == 0 and self.center_violations == 0


def monotonicity_check(disc, params, trials=10_000, seed=0, rtol=1e-11):
    """
    Randomized discrete degenerate-ellipticity check.

    Each trial draws a random state (smooth profile plus noise), an interior
    node and either one of its stencil values (interior neighbour or cut
    boundary value) or the node itself, and raises it by a random amount.
    A violation is a residual decrease for a neighbour raise, or an
    increase (strict decrease by less than eps * amount when eps > 0) for
    a centre raise.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    N = disc.n
    x = disc.grid.interior
    D = disc.nbr.shape[1]
    viol = cviol = 0
    worst = 0.0
    base_args = None
    for trial in range(trials):
        if trial % 50 == 0:
            Q = rng.standard_normal(6)
            u = (Q[0] * x[:, 0] ** 2 + Q[1] * x[:, 0] * x[:, 1] + Q[2] * x[:, 1] ** 2
                 + Q[3] * x[:, 0] + Q[4] * x[:, 1]
                 + 10 ** rng.uniform(-3, 0) * rng.standard_normal(N))
            f = Q[5] * np.ones(N) + 0.1 * rng.standard_normal(N)
            xi = GradientShift(tuple(rng.standard_normal(2) * rng.choice([0.0, 1.0])))
            bval = disc.bval.copy()
            base_args = list(disc.kernel_args(f, xi, params))
            base_args[3] = bval
        i = int(rng.integers(N))
        amount = 10 ** rng.uniform(-6, 1)
        r0 = K.node_residual(i, u, *base_args)[0]
        choice = rng.integers(2 * D + 1)
        if choice == 2 * D:
            u2 = u.copy()
            u2[i] += amount
            r1 = K.node_residual(i, u2, *base_args)[0]
            tol = rtol * (1.0 + abs(r0) + abs(r1))
            bound = r0 - params.epsilon * amount * (1 - 1e-9)
            excess = r1 - bound
            if excess > tol:
                cviol += 1
                worst = max(worst, excess)
            continue
        s, k = divmod(int(choice), D)
        j = disc.nbr[i, k, s]
        if j >= 0:
            u2 = u.copy()
            u2[j] += amount
            r1 = K.node_residual(i, u2, *base_args)[0]
        else:
            args = list(base_args)
            b2 = bval.copy()
            b2[i, k, s] += amount
            args[3] = b2
            r1 = K.node_residual(i, u, *args)[0]
        tol = rtol * (1.0 + abs(r0) + abs(r1))
        if r1 < r0 - tol:
            viol += 1
            worst = max(worst, r0 - r1)
    return MonotonicityReport(trials, viol, cviol, worst)
