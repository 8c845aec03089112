"""
Uniformly elliptic operators on symmetric matrices.

Pucci extremal operators are the canonical instances; linear trace operators
and finite inf/sup families of them are also supported since each has a
monotone wide-stencil discretization (see ``fnlab.scheme``).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EllipticityPair:
    """Ellipticity constants 0 < lam <= Lam."""

    lam: float
    Lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.Lam)):
            raise ValueError("ellipticity constants must be finite")
        if not 0 < self.lam <= self.Lam:
            raise ValueError(f"need 0 < lam <= Lam, got ({self.lam}, {self.Lam})")


def as_sym(M):
    """Validate and return ``M`` as a float symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if not np.array_equal(M, M.T):
        raise ValueError("matrix is not symmetric")
    return M


def _eig2(M):
    a, b, c = M[0, 0], M[0, 1], M[1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    w = np.array([mean - rad, mean + rad])
    if b == 0.0:
        Q = np.eye(2) if a <= c else np.array([[0.0, 1.0], [1.0, 0.0]])
        return np.array([min(a, c), max(a, c)]), Q
    # eigenvector of the larger eigenvalue, chosen to avoid cancellation
    if a >= c:
        v = np.array([w[1] - c, b])
    else:
        v = np.array([b, w[1] - a])
    v /= np.hypot(v[0], v[1])
    Q = np.array([[-v[1], v[0]], [v[0], v[1]]])
    return w, Q


def _eig_jacobi(M, sweeps=60):
    A = M.copy()
    n = A.shape[0]
    Q = np.eye(n)
    scale = np.abs(A).max()
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= 1e-17 * max(scale, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-18 * (abs(A[p, p]) + abs(A[q, q])) or A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                cs = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * cs
                J = np.eye(n)
                J[p, p] = J[q, q] = cs
                J[p, q] = sn
                J[q, p] = -sn
                A = J.T @ A @ J
                Q = Q @ J
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], Q[:, order]


def eig_sym(M, vectors=False):
    """
    Eigenvalues of a real symmetric matrix, ascending.

    Closed form for 2x2, cyclic Jacobi rotations otherwise.

    Parameters
    ----------
    M : array_like
        Symmetric n x n matrix with finite entries.
    vectors : bool
        Also return the orthogonal matrix Q with ``M = Q diag(w) Q^T``.
    """
    M = as_sym(M)
    if M.shape[0] == 1:
        w, Q = M[0].copy(), np.ones((1, 1))
    elif M.shape[0] == 2:
        w, Q = _eig2(M)
    else:
        w, Q = _eig_jacobi(M)
    return (w, Q) if vectors else w


def _pucci(w, lo, hi):
    pos = w[w > 0].sum()
    neg = w[w < 0].sum()
    return hi * pos + lo * neg


def pucci_plus(M, e):
    """Lam * (sum of positive eigenvalues) + lam * (sum of negative eigenvalues)."""
    return float(_pucci(eig_sym(M), e.lam, e.Lam))


def pucci_minus(M, e):
    """lam * (sum of positive eigenvalues) + Lam * (sum of negative eigenvalues)."""
    return float(_pucci(eig_sym(M), e.Lam, e.lam))


PUCCI_PLUS = "pucci_plus"
PUCCI_MINUS = "pucci_minus"
LINEAR = "linear"
INFSUP = "infsup"
KINDS = (PUCCI_PLUS, PUCCI_MINUS, LINEAR, INFSUP)


@dataclass(frozen=True)
class OperatorSpec:
    """
    A uniformly (lam, Lam)-elliptic operator F.

    ``kind`` is one of ``pucci_plus``, ``pucci_minus``, ``linear`` (F(M) =
    tr(A(x) M)) or ``infsup`` (min or max of tr(A_k M) over a finite family).
    ``coeff`` is a constant matrix or a callable ``x -> A(x)`` for ``linear``;
    ``family`` is a tuple of constant matrices for ``infsup`` and ``mode`` is
    ``"sup"`` or ``"inf"``.

    The declared ellipticity pair is not enforced on construction;
    use :func:`check_uniform_ellipticity` to test it.
    """

    kind: str
    ellipticity: EllipticityPair
    coeff: object = None
    family: tuple = field(default=())
    mode: str = "sup"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == LINEAR and self.coeff is None:
            raise ValueError("linear operator needs a coefficient matrix")
        if self.kind == INFSUP:
            if len(self.family) == 0:
                raise ValueError("infsup operator needs a nonempty family")
            if self.mode not in ("sup", "inf"):
                raise ValueError("mode must be 'sup' or 'inf'")

    @classmethod
    def pucci(cls, sign, lam, Lam):
        kind = PUCCI_PLUS if sign == "+" else PUCCI_MINUS
        return cls(kind, EllipticityPair(lam, Lam))

    @classmethod
    def laplacian(cls, n=2):
        return cls(LINEAR, EllipticityPair(1.0, 1.0), coeff=np.eye(n))

    @classmethod
    def linear(cls, A, lam, Lam):
        if not callable(A):
            A = as_sym(A)
        return cls(LINEAR, EllipticityPair(lam, Lam), coeff=A)

    @classmethod
    def infsup(cls, family, lam, Lam, mode="sup"):
        fam = tuple(as_sym(A) for A in family)
        return cls(INFSUP, EllipticityPair(lam, Lam), family=fam, mode=mode)

    @property
    def lam(self):
        return self.ellipticity.lam

    @property
    def Lam(self):
        return self.ellipticity.Lam

    def coefficient(self, x):
        """Coefficient matrix A(x) of a linear operator."""
        A = self.coeff(np.asarray(x, dtype=float)) if callable(self.coeff) else self.coeff
        return as_sym(A)

    def mirrored(self):
        """The operator M -> -F(-M); swaps P+ and P-, sup and inf."""
        if self.kind == PUCCI_PLUS:
            return OperatorSpec(PUCCI_MINUS, self.ellipticity)
        if self.kind == PUCCI_MINUS:
            return OperatorSpec(PUCCI_PLUS, self.ellipticity)
        if self.kind == INFSUP:
            return OperatorSpec(INFSUP, self.ellipticity, family=self.family,
                                mode="inf" if self.mode == "sup" else "sup")
        return self


def apply_operator(spec, M, x=None):
    """Evaluate F(M) at the point ``x`` (only linear operators use ``x``)."""
    M = as_sym(M)
    if spec.kind == PUCCI_PLUS:
        return pucci_plus(M, spec.ellipticity)
    if spec.kind == PUCCI_MINUS:
        return pucci_minus(M, spec.ellipticity)
    if spec.kind == LINEAR:
        if x is None:
            x = np.zeros(M.shape[0])
        return float(np.sum(spec.coefficient(x) * M))
    traces = [float(np.sum(A * M)) for A in spec.family]
    return max(traces) if spec.mode == "sup" else min(traces)


@dataclass
class EllipticityReport:
    samples: int
    violations: int
    worst: float
    examples: list

    @property
    def ok(self):
        return self.violations == 0


def random_sym(rng, n, scale=1.0):
    G = rng.standard_normal((n, n)) * scale
    return 0.5 * (G + G.T)


def random_psd(rng, n, scale=1.0, zero_prob=0.1):
    """Random N >= 0 built as Q D Q^T with D >= 0; occasionally exactly zero."""
    if rng.random() < zero_prob:
        return np.zeros((n, n))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    d = rng.exponential(scale, size=n) * (rng.random(n) < 0.8)
    N = (Q * d) @ Q.T
    return 0.5 * (N + N.T)


def check_uniform_ellipticity(spec, samples=1000, seed=0, n=2, rtol=1e-10):
    """
    Sample pairs (M, N >= 0) and test lam tr(N) <= F(M+N) - F(M) <= Lam tr(N).

    Returns an :class:`EllipticityReport`; violations are reported, not raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    e = spec.ellipticity
    violations, worst, examples = 0, 0.0, []
    for _ in range(samples):
        M = random_sym(rng, n, scale=rng.exponential(2.0))
        N = random_psd(rng, n)
        x = rng.uniform(-1, 1, size=n)
        dF = apply_operator(spec, M + N, x) - apply_operator(spec, M, x)
        trN = np.trace(N)
        tol = rtol * (1.0 + np.abs(M).sum() + np.abs(N).sum())
        excess = max(e.lam * trN - dF, dF - e.Lam * trN)
        worst = max(worst, excess)
        if excess > tol:
            violations += 1
            if len(examples) < 5:
                examples.append((M, N, dF, trN))
    return EllipticityReport(samples, violations, worst, examples)
