"""
Dirichlet solver: pseudo-time iteration on the eps-regularized residual,
continued along a decreasing eps schedule, with explicit barrier sub- and
supersolutions for initialization and a posteriori bounds.

Two pseudo-time integrators share the same discrete fixed point:

``explicit``
    Jacobi forward Euler with the local step ``cfl / diag_i``.
``semi-implicit``
    Linearly implicit (pseudo-transient continuation) step
    ``(diag / c - J) du = R`` with J the Jacobian of the residual (active
    frame held fixed) and ``c`` grown by switched evolution relaxation.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import _kernels as K
from .degeneracy import GradientShift, phi_eval, power
from .geometry import BoundaryData, GridFunction, HalfGraph, ball_condition_radius, build_grid
from .scheme import SchemeParams, Stencil, discretize, residual

EXPLICIT = "explicit"
SEMI_IMPLICIT = "semi-implicit"

_E1 = np.empty(0)
_E3 = np.empty((0, 0, 0))
_CHUNK = 2048


class NonConvergence(RuntimeError):
    """Raised when a stage exceeds its iteration budget; carries diagnostics."""

    def __init__(self, message, stage=None, residual=None, iterations=None, u=None):
        super().__init__(message)
        self.stage = stage
        self.residual = residual
        self.iterations = iterations
        self.u = u


def _as_boundary(g):
    if isinstance(g, BoundaryData):
        return g
    if callable(g):
        return BoundaryData(g)
    c = float(g)
    return BoundaryData(lambda x, c=c: np.full(np.shape(x)[:-1], c),
                        dg=lambda x: np.zeros(np.shape(x)))


@dataclass(frozen=True)
class Problem:
    """
    Phi(x, |xi + Du|) F(D^2 u) = f in the domain, u = g on its boundary.

    ``f`` is a constant or a callable on points (..., 2); ``g`` a constant,
    a callable or a :class:`~fnlab.geometry.BoundaryData`.
    """

    domain: object
    operator: object
    law: object
    f: object = 0.0
    g: object = 0.0
    xi: GradientShift = GradientShift()

    @property
    def boundary(self):
        return _as_boundary(self.g)

    def forcing(self, pts):
        pts = np.asarray(pts, dtype=float)
        if callable(self.f):
            return np.broadcast_to(np.asarray(self.f(pts), dtype=float), pts.shape[:-1]).copy()
        return np.full(pts.shape[:-1], float(self.f))

    def mirrored(self):
        """The problem solved by -u: (-f, -g, M -> -F(-M), -xi)."""
        f, bd = self.f, self.boundary
        nf = (lambda x: -np.asarray(f(x), dtype=float)) if callable(f) else -float(f)
        nd = None if bd.dg is None else (lambda x: -np.asarray(bd.dg(x), dtype=float))
        ng = BoundaryData(lambda x: -bd(x), beta_g=bd.beta_g, dg=nd)
        return Problem(self.domain, self.operator.mirrored(), self.law, nf, ng,
                       GradientShift(tuple(-self.xi.vector)))


@dataclass
class SolveConfig:
    """
    Continuation and iteration settings.

    Attributes
    ----------
    eps_schedule : tuple of float
        Decreasing proper-term coefficients; each stage warm-starts the next.
    eta_factors : tuple of float or None
        Gradient floor per stage in units of h; default decreases
        geometrically from 1e-2 to 1e-6.
    tol : float
        Stage stops when max |R| < tol * (1 + max |f|).
    method : str
        ``semi-implicit`` (default) or ``explicit``.
    cfl : float
        Explicit step factor; also the initial ``c`` of the semi-implicit method.
    max_iter : int
        Explicit iterations per stage.
    max_steps : int
        Semi-implicit steps per stage.
    sequencing : bool
        Solve on coarser grids first (down to ``coarsest_h``) and interpolate.
    init : str
        ``auto``, ``boundary``, ``supersolution`` or ``subsolution``.
    barriers : bool
        Build the barrier pair, clamp the initial state between them and
        record it in the report.
    threads : int
        Worker threads for node sweeps; results do not depend on it.
    """

    eps_schedule: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    eta_factors: tuple = None
    tol: float = 1e-8
    method: str = SEMI_IMPLICIT
    cfl: float = 0.5
    max_iter: int = 2_000_000
    max_steps: int = 5000
    c_max: float = 1e12
    reach: int = 2
    gradient: str = "upwind"
    sequencing: bool = True
    coarsest_h: float = 1.0 / 16
    init: str = "auto"
    barriers: bool = True
    barrier_K: object = "auto"
    clamp_iterates: bool = False
    threads: int = 1

    def __post_init__(self):
        eps = np.asarray(self.eps_schedule, dtype=float)
        if eps.ndim != 1 or len(eps) == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ValueError("eps_schedule must be positive and strictly decreasing")
        if self.eta_factors is not None:
            eta = np.asarray(self.eta_factors, dtype=float)
            if eta.shape != eps.shape or np.any(eta <= 0):
                raise ValueError("eta_factors needs one positive value per stage")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.method not in (EXPLICIT, SEMI_IMPLICIT):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.init not in ("auto", "boundary", "supersolution", "subsolution"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def etas(self, h):
        n = len(self.eps_schedule)
        fac = (np.geomspace(1e-2, 1e-6, n) if n > 1 else np.array([1e-6])) \
            if self.eta_factors is None else np.asarray(self.eta_factors, dtype=float)
        return [float(v) * h for v in fac]


@dataclass
class StageReport:
    eps: float
    eta: float
    iterations: int
    residual: float
    delta: float
    seconds: float


@dataclass
class SolveReport:
    """Per-stage records plus summary measurements of the final solution."""

    h: float
    n_interior: int
    method: str
    stages: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    lipschitz: float = float("nan")
    holder: float = float("nan")
    K_super: float = float("nan")
    K_sub: float = float("nan")
    wall_time: float = 0.0

    @property
    def iterations(self):
        return [s.iterations for s in self.stages]

    @property
    def residuals(self):
        return [s.residual for s in self.stages]

    @property
    def deltas(self):
        return [s.delta for s in self.stages]

    @property
    def converged(self):
        return bool(self.stages) and all(np.isfinite(s.residual) for s in self.stages)


class _Sweeper:
    """Node sweeps over fixed chunks, optionally on a thread pool."""

    def __init__(self, n, threads):
        self.bounds = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)] or [(0, 0)]
        self.pool = ThreadPoolExecutor(threads) if threads > 1 and len(self.bounds) > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __call__(self, mode, u, args, tail):
        if self.pool is None:
            return K.sweep(0, u.shape[0], mode, u, *args, *tail)
        jobs = [self.pool.submit(K.sweep, lo, hi, mode, u, *args, *tail)
                for lo, hi in self.bounds]
        return max(j.result() for j in jobs)


def _context(problem, grid, cfg, disc=None):
    bd = problem.boundary
    if disc is None:
        disc = discretize(grid, bd, problem.operator, problem.law, Stencil(cfg.reach))
    fv = problem.forcing(grid.interior)
    return disc, fv


def _params(cfg, eps, eta):
    return SchemeParams(eta=eta, epsilon=eps, stencil=Stencil(cfg.reach), gradient=cfg.gradient)


def _explicit(disc, fv, xi, u, eps, eta, cfg, sweeper, tol, lower, upper, record=None):
    N = disc.n
    args = disc.kernel_args(fv, xi, _params(cfg, eps, eta))
    a = u.copy()
    b = np.empty(N)
    R, P, Dg = np.empty(N), np.empty(N), np.empty(N)
    r = np.inf
    for it in range(cfg.max_iter):
        if record is not None and it % record[0] == 0:
            record[1].append(a.copy())
        tail = (cfg.cfl, lower, upper, R, P, Dg, b, _E3, _E1)
        r = sweeper(K.UPDATE, a, args, tail)
        if r < tol:
            return a, it, r, cfg.cfl
        a, b = b, a
    raise NonConvergence(f"explicit iteration did not reach tol {tol:.3g} "
                         f"(max |R| = {r:.3g} after {cfg.max_iter} iterations)",
                         residual=r, iterations=cfg.max_iter, u=a)


def _semi_implicit(disc, fv, xi, u, eps, eta, cfg, sweeper, tol, lower, upper, c0):
    N = disc.n
    D = disc.nbr.shape[1]
    args = disc.kernel_args(fv, xi, _params(cfg, eps, eta))
    rows = np.repeat(np.arange(N), 2 * D)
    cols = disc.nbr.ravel()
    live = cols >= 0
    rows, cols = rows[live], cols[live]
    R, P, Dg = np.empty(N), np.empty(N), np.empty(N)
    nbw, cen = np.empty((N, D, 2)), np.empty(N)
    tail = (0.0, lower, upper, R, P, Dg, _E1, nbw, cen)
    u = u.copy()
    c = c0
    r_prev = None
    r = np.inf
    for step in range(cfg.max_steps):
        r = sweeper(K.LINEARIZE, u, args, tail)
        if not np.isfinite(r):
            break
        if r < tol:
            # converged on entry: the state is already close, so take full steps next
            return u, step, r, (c if step else cfg.c_max)
        if r_prev is not None:
            c = min(max(c * min(10.0, max(0.1, r_prev / r)), 1e-4), cfg.c_max)
        r_prev = r
        A = sp.csr_matrix((-nbw.ravel()[live], (rows, cols)), shape=(N, N))
        A = (A + sp.diags(Dg / c - cen)).tocsc()
        du = spsolve(A, R)
        if not np.all(np.isfinite(du)):
            break
        u = u + du
        if cfg.clamp_iterates:
            np.clip(u, lower, upper, out=u)
    raise NonConvergence(f"semi-implicit iteration did not reach tol {tol:.3g} "
                         f"(max |R| = {r:.3g} after {cfg.max_steps} steps)",
                         residual=r, iterations=cfg.max_steps, u=u)


def solve_epsilon(problem, eps, init, cfg=None, eta=None, disc=None, bounds=None,
                  record=None, _c0=None, _sweeper=None):
    """
    Solve Phi F_h(u) - f - eps u = 0 on the grid of ``init``.

    Parameters
    ----------
    problem : Problem
    eps : float
        Proper-term coefficient, > 0.
    init : GridFunction
        Starting state; clamped into ``bounds`` when given.
    cfg : SolveConfig
    eta : float
        Gradient floor (default 1e-6 h).
    disc : Discretization, optional
        Reused when given.
    bounds : (GridFunction, GridFunction), optional
        Sub- and supersolution pair.
    record : int, optional
        Explicit method only: keep every ``record``-th iterate in
        ``report.snapshots``.

    Returns
    -------
    GridFunction, StageReport
    """
    cfg = cfg or SolveConfig()
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = init.grid
    if problem.law.forcing_gradient_power != 0:
        raise ValueError("transformed laws carry a gradient-dependent forcing; "
                         "solve the original problem (same zero set where Du != 0)")
    eta = 1e-6 * grid.h if eta is None else eta
    disc, fv = _context(problem, grid, cfg, disc)
    N = disc.n
    u = init.interior.copy()
    lower, upper = np.full(N, -np.inf), np.full(N, np.inf)
    if bounds is not None:
        lower, upper = bounds[0].interior.copy(), bounds[1].interior.copy()
        np.clip(u, lower, upper, out=u)
    if not cfg.clamp_iterates:
        lower, upper = np.full(N, -np.inf), np.full(N, np.inf)
    tol = cfg.tol * (1.0 + (np.abs(fv).max() if N else 0.0))
    sweeper = _sweeper or _Sweeper(N, cfg.threads)
    t0 = time.perf_counter()
    snaps = []
    try:
        if cfg.method == EXPLICIT:
            u, it, r, c = _explicit(disc, fv, problem.xi, u, eps, eta, cfg, sweeper, tol, lower, upper,
                                    record=(record, snaps) if record else None)
        else:
            u, it, r, c = _semi_implicit(disc, fv, problem.xi, u, eps, eta, cfg, sweeper, tol, lower, upper,
                                         _c0 or cfg.cfl)
    finally:
        if _sweeper is None:
            sweeper.close()
    out = GridFunction.from_interior(grid, u, problem.boundary)
    rep = StageReport(float(eps), float(eta), int(it), float(r),
                      float(np.abs(u - init.interior).max()) if N else 0.0,
                      time.perf_counter() - t0)
    rep.snapshots = snaps
    rep.c_end = c
    return out, rep


# ---------------------------------------------------------------- barriers

def _barrier_geometry(dom, h, samples=None):
    if isinstance(dom, HalfGraph):
        raise ValueError("barriers need a closed boundary; HalfGraph is a local chart")
    r = ball_condition_radius(dom)
    m = samples or max(64, int(np.ceil(4 * dom.perimeter() / h)))
    pts, nrm, _, _ = dom.boundary_samples(m)
    return r, pts, pts + r * nrm


def _deltas(h):
    d = [1.0]
    while d[-1] / 2 >= h:
        d.append(d[-1] / 2)
    return np.array(d)


def _supersolution_values(x, r, pts, centers, gz, kappa, K_, deltas):
    KM = np.array([K_ * K.barrier_multiplier(pts, centers, gz, r, kappa, K_, d) for d in deltas])
    out = np.empty(len(x))
    K.barrier_min(np.ascontiguousarray(x), np.ascontiguousarray(centers),
                  np.ascontiguousarray(gz), r, kappa, KM, deltas, out)
    return out


def build_supersolution(grid, problem, K="auto", eps_values=None, etas=None, cfg=None,
                        disc=None, samples=None):
    """
    Barrier supersolution w = inf over boundary samples z and dyadic delta of
    g(z) + delta + M_delta v_z, with v_z = K (r^-k0 - |x - x_z|^-k0),
    k0 = (n Lam + 1) / lam and x_z the centre of the exterior ball at z.

    ``K="auto"`` starts from max(1, R^(k0+1)/k0), R = r + diam, and doubles
    until Phi F_h(w) - eps w <= -max|f| at every interior node for every
    (eps, eta) in ``zip(eps_values, etas)`` (default: the schedule of ``cfg``
    plus eps = 0).  Returns ``(GridFunction, K)``.
    """
    cfg = cfg or SolveConfig()
    dom = grid.domain
    bd = problem.boundary
    r, pts, centers = _barrier_geometry(dom, grid.h, samples)
    gz = bd(pts)
    op = problem.operator
    kappa = (2 * op.Lam + 1.0) / op.lam
    deltas = _deltas(grid.h)
    x = grid.interior

    def build(K_):
        vals = _supersolution_values(x, r, pts, centers, gz, kappa, K_, deltas)
        return GridFunction.from_interior(grid, vals, bd)

    if K != "auto":
        return build(float(K)), float(K)
    if eps_values is None:
        eps_values = (0.0,) + tuple(cfg.eps_schedule)
        etas = [cfg.etas(grid.h)[0]] + cfg.etas(grid.h)
    if etas is None:
        etas = [1e-6 * grid.h] * len(eps_values)
    if disc is None:
        disc = discretize(grid, bd, problem.operator, problem.law, Stencil(cfg.reach))
    fmax = float(np.abs(problem.forcing(x)).max()) if len(x) else 0.0
    R_ = r + dom.diameter
    K_ = max(1.0, R_ ** (kappa + 1) / kappa)
    for _ in range(60):
        w = build(K_)
        ok = True
        for eps, eta in zip(eps_values, etas):
            res = residual(disc, w, np.full(len(x), -fmax), problem.xi,
                           _params(cfg, eps, eta))
            if len(res) and res.max() > 0:
                ok = False
                break
        if ok:
            return w, K_
        K_ *= 2.0
    raise RuntimeError("no admissible barrier constant found")


def build_subsolution(grid, problem, K="auto", eps_values=None, etas=None, cfg=None,
                      samples=None):
    """Mirror image of :func:`build_supersolution`: minus the supersolution of the mirrored problem."""
    w, K_ = build_supersolution(grid, problem.mirrored(), K, eps_values, etas, cfg,
                                samples=samples)
    return -w, K_


# ---------------------------------------------------------------- driver

def _prolong(coarse, grid, bd):
    """Bilinear interpolation of a coarse grid function onto the interior of ``grid``."""
    A = coarse.as_array()
    cg = coarse.grid
    x = grid.interior
    s = (x - cg.origin) / cg.h
    i0 = np.clip(np.floor(s).astype(int), 0, np.array(cg.shape) - 2)
    t = s - i0
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    vals = np.stack([A[i0[:, 0] + a, i0[:, 1] + b] for a, b in corners], axis=1)
    wts = np.stack([(1 - t[:, 0]) * (1 - t[:, 1]), t[:, 0] * (1 - t[:, 1]),
                    (1 - t[:, 0]) * t[:, 1], t[:, 0] * t[:, 1]], axis=1)
    good = np.isfinite(vals)
    wsum = np.where(good, wts, 0.0).sum(axis=1)
    num = np.where(good, wts * np.nan_to_num(vals), 0.0).sum(axis=1)
    fallback = bd(grid.domain.project(x))
    return np.where(wsum > 1e-12, num / np.maximum(wsum, 1e-12), fallback)


def _levels(problem, h, cfg):
    hs = [h]
    if cfg.sequencing and cfg.method == SEMI_IMPLICIT:
        rb = ball_condition_radius(problem.domain)
        while hs[-1] * 2 <= cfg.coarsest_h * (1 + 1e-12) and hs[-1] * 2 < rb / 4:
            hs.append(hs[-1] * 2)
    return hs[::-1]


def _phi_one_init(problem, grid, cfg, u0, sweeper):
    """Solution of F(D^2 u) = f / Phi(x, 1) at the first eps: a law-free starting state."""
    def f1(p):
        return problem.forcing(p) / phi_eval(problem.law, p, np.ones(p.shape[:-1]))

    base = Problem(problem.domain, problem.operator, power(0), f1, problem.boundary)
    c1 = replace(cfg, method=SEMI_IMPLICIT, clamp_iterates=False)
    out, _ = solve_epsilon(base, cfg.eps_schedule[0], u0, c1, eta=1e-6 * grid.h,
                           _c0=c1.c_max, _sweeper=sweeper)
    return out


def _lipschitz(u):
    """Largest difference quotient between neighbouring interior nodes (axis and diagonal)."""
    grid = u.grid
    A = np.full((grid.shape[0] + 2, grid.shape[1] + 2), np.nan)
    ij = grid.ij[: grid.n_interior] + 1
    A[ij[:, 0], ij[:, 1]] = u.interior
    best = 0.0
    c = A[1:-1, 1:-1]
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        b = A[1 + dx:A.shape[0] - 1 + dx, 1 + dy:A.shape[1] - 1 + dy]
        q = np.abs(c - b) / (grid.h * np.hypot(dx, dy))
        if np.any(np.isfinite(q)):
            best = max(best, float(np.nanmax(q)))
    return best


def _holder(u, alpha=0.5, pairs=20000, seed=0):
    x = u.grid.interior
    v = u.interior
    if len(x) < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(x), pairs)
    j = rng.integers(0, len(x), pairs)
    d = np.linalg.norm(x[i] - x[j], axis=1)
    keep = d > 0
    return float(np.max(np.abs(v[i] - v[j])[keep] / d[keep] ** alpha))


def solve_dirichlet(problem, h, cfg=None, grid=None, barriers=None):
    """
    Solve along the eps schedule, warm-starting each stage.

    Returns ``(GridFunction, SolveReport)``; the report lists per-stage
    iterations, residuals and sup-norm deltas between successive stages.
    When ``cfg.barriers`` is set the barrier pair is in
    ``report.barriers`` as ``(v, w)``.
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    hs = _levels(problem, h, cfg)
    prev = None
    report = None
    for lev, hl in enumerate(hs):
        final = lev == len(hs) - 1
        g = grid if (final and grid is not None) else build_grid(problem.domain, hl)
        u, report = _solve_level(problem, g, cfg, prev, barriers if final else None, final)
        report.levels = hs[: lev + 1]
        prev = u
    report.wall_time = time.perf_counter() - t0
    return u, report


def _solve_level(problem, grid, cfg, prev, barriers, final):
    disc, fv = _context(problem, grid, cfg)
    bd = problem.boundary
    N = disc.n
    report = SolveReport(grid.h, N, cfg.method)
    sweeper = _Sweeper(N, cfg.threads)
    try:
        bounds = None
        if cfg.barriers and final and not isinstance(problem.domain, HalfGraph):
            if barriers is None:
                w, Kw = build_supersolution(grid, problem, cfg.barrier_K, cfg=cfg, disc=disc)
                v, Kv = build_subsolution(grid, problem, cfg.barrier_K, cfg=cfg)
                barriers = (v, w)
                report.K_super, report.K_sub = Kw, Kv
            bounds = barriers
        report.barriers = bounds
        if prev is not None:
            u = GridFunction.from_interior(grid, _prolong(prev, grid, bd), bd)
        else:
            start = bd.extend(grid.interior, grid.domain.project(grid.interior), linear=False)
            u = GridFunction.from_interior(grid, start, bd)
            if cfg.init == "supersolution" and bounds is not None:
                u = bounds[1].copy()
            elif cfg.init == "subsolution" and bounds is not None:
                u = bounds[0].copy()
            elif cfg.init == "auto" and cfg.method == SEMI_IMPLICIT:
                u = _phi_one_init(problem, grid, cfg, u, sweeper)
        etas = cfg.etas(grid.h)
        c = None
        for k, (eps, eta) in enumerate(zip(cfg.eps_schedule, etas)):
            try:
                u_new, st = solve_epsilon(problem, eps, u, cfg, eta=eta, disc=disc, bounds=bounds,
                                          _c0=c, _sweeper=sweeper)
            except NonConvergence as exc:
                exc.stage = k
                raise
            c = st.c_end
            report.stages.append(st)
            u = u_new
    finally:
        sweeper.close()
    report.lipschitz = _lipschitz(u)
    report.holder = _holder(u)
    return u, report
