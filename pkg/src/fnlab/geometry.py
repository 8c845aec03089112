"""
Bounded C^{1,1} planar domains, signed distance, grids and boundary data.

Signed distances are negative inside.  Every domain exposes ``sdf``,
``project`` (closest boundary point) and ``boundary_samples`` (points,
outward normals, signed curvature, arc-length weights).
"""

from dataclasses import dataclass

import numpy as np


class Domain:
    kind = "domain"

    def sdf(self, x):
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def boundary_samples(self, m):
        raise NotImplementedError

    @property
    def bbox(self):
        raise NotImplementedError

    @property
    def diameter(self):
        raise NotImplementedError

    def perimeter(self, m=4096):
        return float(self.boundary_samples(m)[3].sum())

    def contains(self, x):
        return self.sdf(x) < 0


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    kind = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def sdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def project(self, x):
        c = np.asarray(self.center, dtype=float)
        v = np.asarray(x, dtype=float) - c
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        v = np.where(r == 0, [1.0, 0.0], v)
        r = np.where(r == 0, 1.0, r)
        return c + self.radius * v / r

    def boundary_samples(self, m):
        th = 2 * np.pi * np.arange(m) / m
        nrm = np.stack([np.cos(th), np.sin(th)], axis=-1)
        pts = np.asarray(self.center) + self.radius * nrm
        curv = np.full(m, 1.0 / self.radius)
        w = np.full(m, 2 * np.pi * self.radius / m)
        return pts, nrm, curv, w

    @property
    def bbox(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius

    @property
    def diameter(self):
        return 2.0 * self.radius


@dataclass(frozen=True)
class Annulus(Domain):
    r_in: float = 1.0
    r_out: float = 2.0
    center: tuple = (0.0, 0.0)
    kind = "annulus"

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ValueError("need 0 < r_in < r_out")

    def sdf(self, x):
        r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(self.center), axis=-1)
        return np.maximum(self.r_in - r, r - self.r_out)

    def project(self, x):
        c = np.asarray(self.center, dtype=float)
        v = np.asarray(x, dtype=float) - c
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(r == 0, 1.0, r)
        u = np.where(r == 0, [1.0, 0.0], v / safe)
        rad = np.where(r < 0.5 * (self.r_in + self.r_out), self.r_in, self.r_out)
        return c + rad * u

    def boundary_samples(self, m):
        m_in = max(4, int(round(m * self.r_in / (self.r_in + self.r_out))))
        m_out = max(4, m - m_in)
        th_o = 2 * np.pi * np.arange(m_out) / m_out
        th_i = 2 * np.pi * np.arange(m_in) / m_in
        u_o = np.stack([np.cos(th_o), np.sin(th_o)], axis=-1)
        u_i = np.stack([np.cos(th_i), np.sin(th_i)], axis=-1)
        c = np.asarray(self.center, dtype=float)
        pts = np.concatenate([c + self.r_out * u_o, c + self.r_in * u_i])
        nrm = np.concatenate([u_o, -u_i])
        curv = np.concatenate([np.full(m_out, 1 / self.r_out), np.full(m_in, -1 / self.r_in)])
        w = np.concatenate([np.full(m_out, 2 * np.pi * self.r_out / m_out),
                            np.full(m_in, 2 * np.pi * self.r_in / m_in)])
        return pts, nrm, curv, w

    @property
    def bbox(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.r_out, c + self.r_out

    @property
    def diameter(self):
        return 2.0 * self.r_out


def _ellipse_root(a, b, y0, y1):
    # first-quadrant closest point (Eberly): root of G(t) = (a y0/(t+a^2))^2 + (b y1/(t+b^2))^2 - 1
    # on t > -b^2, by safeguarded Newton iteration
    t = np.maximum(b * y1 - b * b, a * y0 - a * a)
    lo = np.full_like(t, -b * b)
    hi = np.sqrt((a * y0) ** 2 + (b * y1) ** 2) + 1.0
    t = np.clip(t, lo, hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _newton(a, b, y0, y1, t, lo, hi)


def _newton(a, b, y0, y1, t, lo, hi):
    for _ in range(200):
        p = a * y0 / (t + a * a)
        q = b * y1 / (t + b * b)
        G = p * p + q * q - 1.0
        dG = -2.0 * (p * p / (t + a * a) + q * q / (t + b * b))
        hi = np.where(G < 0, t, hi)
        lo = np.where(G > 0, t, lo)
        tn = t - G / dG
        bad = ~np.isfinite(tn) | (tn <= lo) | (tn >= hi)
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        if np.all(np.abs(tn - t) <= 1e-15 * (1.0 + np.abs(t))):
            t = tn
            break
        t = tn
    return t


@dataclass(frozen=True)
class Ellipse(Domain):
    a: float = 2.0
    b: float = 1.0
    center: tuple = (0.0, 0.0)
    kind = "ellipse"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("semi-axes must be positive")

    def _closest(self, x):
        c = np.asarray(self.center, dtype=float)
        v = np.asarray(x, dtype=float) - c
        swap = self.a < self.b
        a, b = (self.b, self.a) if swap else (self.a, self.b)
        y0 = np.abs(v[..., 1] if swap else v[..., 0])
        y1 = np.abs(v[..., 0] if swap else v[..., 1])
        z0 = np.empty_like(y0)
        z1 = np.empty_like(y1)
        on_axis = y1 <= 1e-13 * a
        gen = ~on_axis
        if np.any(gen):
            t = _ellipse_root(a, b, y0[gen], y1[gen])
            z0[gen] = a * a * y0[gen] / (t + a * a)
            z1[gen] = b * b * y1[gen] / (t + b * b)
        if np.any(on_axis):
            yy = y0[on_axis]
            # near the centre the closest point leaves the major axis
            thr = (a * a - b * b) / a
            inner = yy < thr
            zz0 = np.where(inner, a * a * yy / (a * a - b * b), a)
            zz1 = np.where(inner, b * np.sqrt(np.clip(1 - (zz0 / a) ** 2, 0, None)), 0.0)
            z0[on_axis], z1[on_axis] = zz0, zz1
        s0 = np.sign(v[..., 1] if swap else v[..., 0])
        s1 = np.sign(v[..., 0] if swap else v[..., 1])
        s0 = np.where(s0 == 0, 1.0, s0)
        s1 = np.where(s1 == 0, 1.0, s1)
        p0, p1 = s0 * z0, s1 * z1
        if swap:
            p0, p1 = p1, p0
        return c + np.stack([p0, p1], axis=-1)

    def sdf(self, x):
        x = np.asarray(x, dtype=float)
        p = self._closest(x)
        dist = np.linalg.norm(x - p, axis=-1)
        v = x - np.asarray(self.center)
        inside = (v[..., 0] / self.a) ** 2 + (v[..., 1] / self.b) ** 2 < 1
        return np.where(inside, -dist, dist)

    def project(self, x):
        return self._closest(x)

    def boundary_samples(self, m):
        th = 2 * np.pi * np.arange(m) / m
        a, b = self.a, self.b
        pts = np.stack([a * np.cos(th), b * np.sin(th)], axis=-1) + np.asarray(self.center)
        nrm = np.stack([b * np.cos(th), a * np.sin(th)], axis=-1)
        speed = np.sqrt((a * np.sin(th)) ** 2 + (b * np.cos(th)) ** 2)
        nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
        curv = a * b / speed ** 3
        w = speed * 2 * np.pi / m
        return pts, nrm, curv, w

    @property
    def bbox(self):
        c = np.asarray(self.center, dtype=float)
        return c - np.array([self.a, self.b]), c + np.array([self.a, self.b])

    @property
    def diameter(self):
        return 2.0 * max(self.a, self.b)


@dataclass(frozen=True)
class HalfGraph(Domain):
    """
    Local boundary chart {x2 > phi(x1)} cut by the ball |x| < R.

    ``phi``, ``dphi`` and ``d2phi`` are vectorized callables; ``d2_bound``
    bounds |phi''|.  The chart has corners where the graph meets the
    cap, so only the graph part enters the ball-condition radius.
    """

    phi: object
    dphi: object
    d2phi: object
    d2_bound: float
    R: float = 1.0
    kind = "halfgraph"

    def _graph_foot(self, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        s = x1.copy()
        for _ in range(100):
            ph, dp, d2 = self.phi(s), self.dphi(s), self.d2phi(s)
            g = (s - x1) + (ph - x2) * dp
            dg = 1.0 + dp * dp + (ph - x2) * d2
            dg = np.where(dg <= 1e-3, 1.0 + dp * dp, dg)
            step = g / dg
            s = s - step
            if np.all(np.abs(step) < 1e-15 * (1 + np.abs(s))):
                break
        return np.stack([s, self.phi(s)], axis=-1)

    def sdf_graph(self, x):
        x = np.asarray(x, dtype=float)
        p = self._graph_foot(x)
        dist = np.linalg.norm(x - p, axis=-1)
        return np.where(x[..., 1] > self.phi(x[..., 0]), -dist, dist)

    def sdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.maximum(self.sdf_graph(x), np.linalg.norm(x, axis=-1) - self.R)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        dg = np.abs(self.sdf_graph(x))
        dc = np.abs(np.linalg.norm(x, axis=-1) - self.R)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        cap = self.R * x / np.where(r == 0, 1.0, r)
        return np.where((dg <= dc)[..., None], self._graph_foot(x), cap)

    def boundary_samples(self, m):
        # graph part only (see class docstring)
        s = np.linspace(-self.R, self.R, m)
        keep = s ** 2 + self.phi(s) ** 2 < self.R ** 2
        s = s[keep]
        dp, d2 = self.dphi(s), self.d2phi(s)
        pts = np.stack([s, self.phi(s)], axis=-1)
        nrm = np.stack([dp, -np.ones_like(s)], axis=-1) / np.sqrt(1 + dp * dp)[:, None]
        curv = -d2 / (1 + dp * dp) ** 1.5
        w = np.sqrt(1 + dp * dp) * (s[1] - s[0])
        return pts, nrm, curv, w

    @property
    def bbox(self):
        return np.array([-self.R, -self.R]), np.array([self.R, self.R])

    @property
    def diameter(self):
        return 2.0 * self.R


def signed_distance(dom, x):
    """Signed distance to the boundary of ``dom`` (negative inside)."""
    return dom.sdf(x)


def ball_condition_radius(dom, samples=512, tol=1e-9):
    """
    Largest r for which every sampled boundary point has interior and
    exterior tangent balls of radius r.

    Starts from 1 / max |curvature| and shrinks (bisection) until no
    interior ball centre is closer than r to the boundary and no exterior
    one reaches into the domain.
    """
    if samples < 8:
        raise ValueError("need at least 8 boundary samples")
    pts, nrm, curv, _ = dom.boundary_samples(samples)
    kmax = np.abs(curv).max()
    r_max = 1.0 / kmax if kmax > 0 else dom.diameter
    r_max = min(r_max, dom.diameter)
    if not np.isfinite(r_max) or r_max <= 0:
        raise ValueError("degenerate domain")

    def ok(r):
        scale = tol * max(1.0, r)
        d_in = dom.sdf(pts - r * nrm)
        d_out = dom.sdf(pts + r * nrm)
        return np.all(d_in <= -r + scale) and np.all(d_out >= r - scale)

    if isinstance(dom, HalfGraph):
        return float(r_max)
    if ok(r_max):
        return float(r_max)
    lo, hi = 0.0, r_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    if lo <= 0:
        raise ValueError("domain fails the ball condition at the sampled resolution")
    return float(lo)


INTERIOR, BAND = 0, 1


@dataclass
class Grid:
    """
    Uniform Cartesian grid restricted to a domain.

    Active nodes are ordered interior first, then the boundary band
    (exterior nodes within ``band_width`` of the domain, and nodes lying
    on the boundary).  ``index`` maps full-grid (i, j) to the active index
    or -1.
    """

    domain: Domain
    h: float
    origin: np.ndarray
    shape: tuple
    ij: np.ndarray
    points: np.ndarray
    kind: np.ndarray
    sd: np.ndarray
    projection: np.ndarray
    index: np.ndarray
    n_interior: int

    @property
    def interior(self):
        return self.points[: self.n_interior]

    @property
    def band(self):
        return self.points[self.n_interior:]

    @property
    def band_projection(self):
        return self.projection[self.n_interior:]

    @property
    def n_active(self):
        return len(self.points)

    def node_at(self, i, j):
        if 0 <= i < self.shape[0] and 0 <= j < self.shape[1]:
            return int(self.index[i, j])
        return -1

    def lattice(self, x):
        """Nearest lattice coordinates (i, j) of points x."""
        return np.rint((np.asarray(x) - self.origin) / self.h).astype(int)


def build_grid(dom, h, band_width=None, check_ball=True):
    """
    Classify the nodes of the lattice ``h Z^2`` inside the bounding box.

    Raises ``ValueError`` when ``h`` is not below a quarter of the
    ball-condition radius.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if check_ball:
        r = ball_condition_radius(dom)
        if not h < r / 4:
            raise ValueError(f"h={h} too large: need h < ball radius / 4 = {r / 4}")
    if band_width is None:
        band_width = 3.0 * h
    lo, hi = dom.bbox
    lo = np.floor((lo - band_width) / h) * h
    hi = np.ceil((hi + band_width) / h) * h
    nx = int(round((hi[0] - lo[0]) / h)) + 1
    ny = int(round((hi[1] - lo[1]) / h)) + 1
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    P = np.stack([lo[0] + h * I, lo[1] + h * J], axis=-1)
    # snap lattice coordinates so that e.g. 0 is represented exactly
    P = np.round(P / h) * h
    d = dom.sdf(P)
    interior = d < 0
    band = (~interior) & (d <= band_width)
    order_int = np.flatnonzero(interior.ravel())
    order_band = np.flatnonzero(band.ravel())
    flat = np.concatenate([order_int, order_band])
    ij = np.stack([I.ravel()[flat], J.ravel()[flat]], axis=-1)
    pts = P.reshape(-1, 2)[flat]
    sd = d.ravel()[flat]
    kind = np.concatenate([np.full(len(order_int), INTERIOR, dtype=np.int8),
                           np.full(len(order_band), BAND, dtype=np.int8)])
    proj = pts.copy()
    if len(order_band):
        proj[len(order_int):] = dom.project(pts[len(order_int):])
    index = -np.ones((nx, ny), dtype=np.int64)
    index[ij[:, 0], ij[:, 1]] = np.arange(len(flat))
    return Grid(dom, float(h), lo, (nx, ny), ij, pts, kind, sd, proj, index, len(order_int))


@dataclass
class BoundaryData:
    """
    Dirichlet data g, given as a callable on points of shape (..., 2).

    ``dg`` optionally gives the ambient gradient of g; otherwise it is
    approximated by centred differences.
    """

    g: object
    beta_g: float = 0.5
    dg: object = None

    def __post_init__(self):
        if not 0 < self.beta_g < 1:
            raise ValueError("beta_g must lie in (0, 1)")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.g(x), dtype=float), x.shape[:-1]).copy()

    def gradient(self, x, step=1e-6):
        x = np.asarray(x, dtype=float)
        if self.dg is not None:
            return np.asarray(self.dg(x), dtype=float)
        e = np.eye(x.shape[-1]) * step
        return np.stack([(self(x + e[k]) - self(x - e[k])) / (2 * step)
                         for k in range(x.shape[-1])], axis=-1)

    def extend(self, x, proj, linear=True):
        """g at the projection, plus the first-order correction Dg.(x - proj)."""
        val = self(proj)
        if linear:
            val = val + np.sum(self.gradient(proj) * (np.asarray(x) - proj), axis=-1)
        return val


def boundary_norm(bd, dom, samples=400):
    """
    Sampled C^{1,beta_g} norm of g on the boundary:
    sup|g| + sup|d_T g| + Hoelder seminorm of d_T g (d_T: tangential derivative).
    """
    pts, nrm, _, _ = dom.boundary_samples(samples)
    tan = np.stack([-nrm[:, 1], nrm[:, 0]], axis=-1)
    gv = bd(pts)
    dt = np.sum(bd.gradient(pts) * tan, axis=-1)
    diff = np.abs(dt[:, None] - dt[None, :])
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    semi = float(np.max(diff / dist ** bd.beta_g))
    return float(np.abs(gv).max() + np.abs(dt).max() + semi)


class GridFunction:
    """Values on the active nodes (interior first, then band) of a grid."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_active,):
            raise ValueError(f"expected {grid.n_active} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.broadcast_to(fn(grid.points), (grid.n_active,)).astype(float))

    @classmethod
    def from_interior(cls, grid, interior, bd, linear=True):
        band = bd.extend(grid.band, grid.band_projection, linear=linear)
        return cls(grid, np.concatenate([interior, band]))

    @property
    def interior(self):
        return self.values[: self.grid.n_interior]

    @property
    def band(self):
        return self.values[self.grid.n_interior:]

    def as_array(self, fill=np.nan):
        """Values on the full lattice, ``fill`` off the active set."""
        out = np.full(self.grid.shape, fill)
        out[self.grid.ij[:, 0], self.grid.ij[:, 1]] = self.values
        return out

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - _vals(other))

    def __add__(self, other):
        return GridFunction(self.grid, self.values + _vals(other))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


def _vals(v):
    return v.values if isinstance(v, GridFunction) else v
