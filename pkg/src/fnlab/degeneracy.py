"""
Gradient weights Phi(x, t), their structural constants and transforms.

Every built-in law is a finite sum of power terms

    Phi(x, t) = sum_j c_j(x) * t ** p_j(x),   c_j >= 0,

with coefficient and exponent fields given as constants or callables on
point arrays of shape (..., n).  The class is closed under all the
transforms used here (gradient normalization, smallness rescaling and the
iterated blow-up), and the sign of each exponent tells the scheme whether
the term is increasing or decreasing in t.
"""

from dataclasses import dataclass, field, replace

import numpy as np

POWER = "power"
DOUBLE_PHASE = "double_phase"
VARIABLE_EXPONENT = "variable_exponent"


def _field(v, x):
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    if callable(v):
        return np.broadcast_to(np.asarray(v(x), dtype=float), shape)
    return np.full(shape, float(v))


@dataclass(frozen=True)
class PowerTerm:
    """c(x) * t ** p(x); ``coef`` and ``expo`` are floats or callables."""

    coef: object
    expo: object

    def coef_at(self, x):
        return _field(self.coef, x)

    def expo_at(self, x):
        return _field(self.expo, x)


@dataclass(frozen=True)
class DegeneracyLaw:
    """
    A gradient weight with declared indices.

    Attributes
    ----------
    kind : str
        ``power``, ``double_phase`` or ``variable_exponent``.
    terms : tuple of PowerTerm
    i_phi, s_phi : float
        Lower and upper growth indices, ``-1 < i_phi <= s_phi``.
    L : float
        Almost-monotonicity constant, ``L >= 1``.
    nu0, nu1 : float
        Bounds on Phi(x, 1).
    params : dict
        Descriptive parameters (for reports only).
    forcing_gradient_power : float
        Set by :func:`transform_singular_to_degenerate`; the transformed
        problem uses forcing ``|Du| ** forcing_gradient_power * f``.
    """

    kind: str
    terms: tuple
    i_phi: float
    s_phi: float
    L: float = 1.0
    nu0: float = 1.0
    nu1: float = 1.0
    params: dict = field(default_factory=dict, compare=False)
    forcing_gradient_power: float = 0.0

    def __post_init__(self):
        if not self.i_phi > -1:
            raise ValueError("need i_phi > -1")
        if self.s_phi < self.i_phi:
            raise ValueError("need s_phi >= i_phi")
        if self.L < 1:
            raise ValueError("need L >= 1")
        if not 0 < self.nu0 <= self.nu1:
            raise ValueError("need 0 < nu0 <= nu1")

    def __call__(self, x, t):
        return phi_eval(self, x, t)

    @property
    def singular(self):
        return self.i_phi < 0

    def describe(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.kind}({args})"


def power(p):
    """Phi(x, t) = t ** p."""
    return DegeneracyLaw(POWER, (PowerTerm(1.0, float(p)),), float(p), float(p),
                         params={"p": p})


def double_phase(p, q, a=1.0, samples=None):
    """
    Phi(x, t) = t ** p + a(x) t ** q with p <= q and a >= 0.

    ``nu0``/``nu1`` are the extremes of 1 + a(x); for a callable ``a`` they
    are taken over ``samples`` (an array of points).
    """
    if q < p:
        raise ValueError("need p <= q")
    if callable(a):
        if samples is None:
            raise ValueError("a callable coefficient needs sample points")
        av = _field(a, samples)
    else:
        av = np.array([float(a)])
    if np.any(av < 0):
        raise ValueError("coefficient a(x) must be nonnegative")
    return DegeneracyLaw(DOUBLE_PHASE, (PowerTerm(1.0, float(p)), PowerTerm(a, float(q))),
                         float(p), float(q), nu0=1.0 + float(av.min()),
                         nu1=1.0 + float(av.max()), params={"p": p, "q": q})


def variable_exponent(p_field, samples):
    """Phi(x, t) = t ** p(x); indices are inf/sup of p over ``samples``."""
    pv = _field(p_field, samples)
    return DegeneracyLaw(VARIABLE_EXPONENT, (PowerTerm(1.0, p_field),),
                         float(pv.min()), float(pv.max()),
                         params={"p_min": float(pv.min()), "p_max": float(pv.max())})


def phi_eval(law, x, t):
    """
    Evaluate Phi(x, t).

    ``x`` has shape (..., n) and ``t`` broadcasts against ``x.shape[:-1]``.
    At t = 0 a term with negative exponent evaluates to +inf.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Phi is only defined for t >= 0")
    x = np.asarray(x, dtype=float)
    out = 0.0
    with np.errstate(divide="ignore"):
        for term in law.terms:
            out = out + term.coef_at(x) * t ** term.expo_at(x)
    return out if np.ndim(out) else float(out)


@dataclass
class A2Report:
    pairs: int
    monotonicity_violations: int
    normalization_violations: int
    worst_ratio: float

    @property
    def ok(self):
        return self.monotonicity_violations == 0 and self.normalization_violations == 0


def check_a2(law, x_samples, t_pairs=10_000, seed=0, t_range=(1e-6, 1e6), rtol=1e-10):
    """
    Sampled check of the almost-monotonicity and normalization conditions.

    For random x among ``x_samples`` and log-uniform 0 < t1 < t2 tests

        Phi(x,t2)/t2**i >= Phi(x,t1)/t1**i / L
        Phi(x,t2)/t2**s <= L * Phi(x,t1)/t1**s

    with ``L`` inflated by ``1 + rtol``, and nu0 <= Phi(x, 1) <= nu1 at
    every sample point.
    """
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    if t_pairs < 1 or len(x_samples) < 1:
        raise ValueError("sample counts must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = np.log(t_range[0]), np.log(t_range[1])
    t = np.exp(rng.uniform(lo, hi, size=(t_pairs, 2)))
    t.sort(axis=1)
    t1, t2 = t[:, 0], t[:, 1]
    keep = t1 < t2
    t1, t2 = t1[keep], t2[keep]
    x = x_samples[rng.integers(0, len(x_samples), size=len(t1))]
    f1, f2 = phi_eval(law, x, t1), phi_eval(law, x, t2)
    Lt = law.L * (1.0 + rtol)
    # compare in logs: products like t**s overflow for wide t ranges
    with np.errstate(divide="ignore"):
        lf1, lf2 = np.log(f1), np.log(f2)
    lt1, lt2 = np.log(t1), np.log(t2)
    low = (lf2 - law.i_phi * lt2) - (lf1 - law.i_phi * lt1) + np.log(Lt)
    up = np.log(Lt) - ((lf2 - law.s_phi * lt2) - (lf1 - law.s_phi * lt1))
    mono = int(np.sum(low < 0) + np.sum(up < 0))
    worst = float(min(low.min(), up.min())) if len(low) else 0.0
    one = phi_eval(law, x_samples, np.ones(len(x_samples)))
    norm = int(np.sum((one < law.nu0 * (1 - rtol)) | (one > law.nu1 * (1 + rtol))))
    return A2Report(len(t1), mono, norm, worst)


def transform_singular_to_degenerate(law):
    """
    Return Phi~(x, t) = t ** (-i) Phi(x, t), with i(Phi~) = 0 and s = s - i.

    The forcing of the transformed equation is ``|Du| ** (-i) * f``; the
    exponent is recorded in ``forcing_gradient_power``.
    """
    i = law.i_phi
    if i == 0:
        return law

    def shift(p):
        if callable(p):
            return lambda x, p=p: np.asarray(p(x), dtype=float) - i
        return float(p) - i

    terms = tuple(PowerTerm(tm.coef, shift(tm.expo)) for tm in law.terms)
    params = dict(law.params)
    for key in ("p", "q", "p_min", "p_max"):
        if key in params:
            params[key] = params[key] - i
    return replace(law, terms=terms, i_phi=0.0, s_phi=law.s_phi - i, params=params,
                   forcing_gradient_power=law.forcing_gradient_power - i)


def _rescaled(law, shift, space_scale, grad_scale):
    # Phi^(y, t) = Phi(shift + space_scale*y, grad_scale*t) / Phi(shift + space_scale*y, grad_scale)
    shift = np.asarray(shift, dtype=float)

    def X(y):
        return shift + space_scale * np.asarray(y, dtype=float)

    if len(law.terms) == 1 and not callable(law.terms[0].expo):
        # single power term: the normalized coefficient is exactly one
        return replace(law, terms=(PowerTerm(1.0, law.terms[0].expo),), nu0=1.0, nu1=1.0)

    def norm(y):
        return phi_eval(law, X(y), np.full(np.shape(y)[:-1], grad_scale))

    terms = []
    for tm in law.terms:
        def coef(y, tm=tm):
            xx = X(y)
            return tm.coef_at(xx) * grad_scale ** tm.expo_at(xx) / norm(y)

        expo = (lambda y, tm=tm: tm.expo_at(X(y))) if callable(tm.expo) else tm.expo
        terms.append(PowerTerm(coef, expo))
    return replace(law, terms=tuple(terms), nu0=1.0, nu1=1.0)


def rescale_smallness(law, x0, r, K):
    """Phi_bar(y, t) = Phi(r y + x0, (K/r) t) / Phi(r y + x0, K/r)."""
    if not 0 < r <= 1:
        raise ValueError("need 0 < r <= 1")
    if K < 1:
        raise ValueError("need K >= 1")
    return _rescaled(law, x0, r, K / r)


def rescale_iterate(law, rho, k, alpha, center=None):
    """
    Blow-up law of step k: Phi(c + rho^k y, rho^(k alpha) t) / Phi(c + rho^k y, rho^(k alpha)).

    ``y`` is measured from ``center`` (default the origin).  Declared
    constants are unchanged.
    """
    if not 0 < rho < 0.5:
        raise ValueError("need 0 < rho < 1/2")
    if int(k) != k or k < 0:
        raise ValueError("k must be a nonnegative integer")
    if not 0 < alpha < 1:
        raise ValueError("need 0 < alpha < 1")
    if center is None:
        center = 0.0
    return _rescaled(law, center, rho ** k, rho ** (k * alpha))


@dataclass(frozen=True)
class GradientShift:
    """Constant vector xi added to the gradient inside Phi."""

    xi: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("xi must be finite")

    @property
    def vector(self):
        return np.asarray(self.xi, dtype=float)
