"""
Experiment configuration files: INI-style sections of ``key = value`` lines.

See the README for the full grammar.  :func:`load` returns an
:class:`ExperimentConfig` with the problem objects already built;
malformed input raises :class:`ConfigError` carrying the line number.
"""

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .degeneracy import GradientShift, double_phase, power, variable_exponent
from .expr import Expr, ExprError, number
from .geometry import Annulus, Ball, BoundaryData, Ellipse, HalfGraph, ball_condition_radius
from .operators import OperatorSpec
from .solver import Problem, SolveConfig

EXPERIMENTS = ("solve", "abp", "barrier", "comparison", "regularity", "assumptions")

CHECK_DEFAULTS = {
    "error_tol": None,          # expression in h
    "rate_min": None,
    "abp_spread": "0.2",
    "abp_scales": None,         # forcing factors for the scaling test
    "abp_exponent_tol": "0.1",
    "comparison_pairs": "100",
    "barrier_gamma": "0.5",
    "barrier_r": "0.5",
    "barrier_delta": None,      # default: the admissible delta0
    "eps0": "0.01",
    "alpha_center": None,       # "x1, x2"; default: first boundary sample
    "alpha_rho": "0.5",
    "alpha_min_radius": "16",   # smallest fit radius, in units of h
    "alpha_target": None,       # default: the structural cap
    "alpha_tol": "0.05",
    "alpha_bar": None,
    "trials": "10000",
    "sandwich_tol": "1e-8",
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line in the file when known."""

    def __init__(self, message, path=None, line=None):
        loc = "" if path is None else f"{path}:{line}: " if line else f"{path}: "
        super().__init__(loc + message)
        self.line = line


@dataclass
class ExperimentConfig:
    name: str
    description: str
    problem: Problem
    hs: list
    solve: SolveConfig
    experiments: list
    checks: dict
    exact: Expr = None
    out: str = None
    source: dict = field(default_factory=dict)


def _lines(text):
    """Map (section, key) to its line number."""
    where, sec = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip().lower()
            where[(sec, None)] = no
        elif sec and "=" in s and not s.startswith(("#", ";")):
            where[(sec, s.split("=", 1)[0].strip().lower())] = no
    return where


def _call(text):
    """Split ``name(a, b, ...)`` into (name, [args]); a bare name has no args."""
    m = re.fullmatch(r"\s*([A-Za-z_][\w+\-]*)\s*(?:\((.*)\))?\s*", text)
    if not m:
        raise ValueError(f"expected name(args...), got {text!r}")
    args = [a.strip() for a in m.group(2).split(",")] if m.group(2) is not None else []
    if args == [""]:
        args = []
    return m.group(1).lower(), args


def _nargs(name, args, k):
    if len(args) != k:
        raise ValueError(f"{name} takes {k} argument(s), got {len(args)}")
    return [number(a) for a in args]


def parse_domain(text):
    name, args = _call(text)
    if name == "ball":
        cx, cy, r = _nargs(name, args, 3)
        return Ball((cx, cy), r)
    if name == "annulus":
        cx, cy, ri, ro = _nargs(name, args, 4)
        return Annulus(ri, ro, (cx, cy))
    if name == "ellipse":
        cx, cy, a, b = _nargs(name, args, 4)
        return Ellipse(a, b, (cx, cy))
    if name == "halfgraph":
        a, R = _nargs(name, args, 2)
        return HalfGraph(lambda s, a=a: a * np.asarray(s) ** 2,
                         lambda s, a=a: 2 * a * np.asarray(s),
                         lambda s, a=a: np.full(np.shape(s), 2 * a),
                         abs(2 * a), R)
    raise ValueError(f"unknown domain {name!r}")


def parse_operator(text):
    name, args = _call(text)
    if name == "laplacian":
        _nargs(name, args, 0)
        return OperatorSpec.laplacian()
    if name in ("pucci+", "pucci-"):
        lam, Lam = _nargs(name, args, 2)
        return OperatorSpec.pucci(name[-1], lam, Lam)
    if name == "linear":
        a11, a12, a22, lam, Lam = _nargs(name, args, 5)
        return OperatorSpec.linear(np.array([[a11, a12], [a12, a22]]), lam, Lam)
    raise ValueError(f"unknown operator {name!r}")


def parse_law(text, samples):
    name, args = _call(text)
    if name == "power":
        (p,) = _nargs(name, args, 1)
        return power(p)
    if name == "double_phase":
        p, q, a = _nargs(name, args, 3)
        return double_phase(p, q, a)
    if name == "variable_exponent":
        if len(args) != 1:
            raise ValueError("variable_exponent takes 1 argument")
        return variable_exponent(Expr(args[0]), samples)
    raise ValueError(f"unknown law {name!r}")


def _domain_samples(dom, m=41):
    lo, hi = dom.bbox
    g0, g1 = np.linspace(lo[0], hi[0], m), np.linspace(lo[1], hi[1], m)
    P = np.stack(np.meshgrid(g0, g1, indexing="ij"), -1).reshape(-1, 2)
    return np.concatenate([P[dom.contains(P)], dom.boundary_samples(64)[0]])


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _solve_config(sec):
    kw = {}
    types = {f.name: f.type for f in fields(SolveConfig)}
    for key, raw in sec.items():
        if key not in types:
            raise KeyError(key)
        if key in ("eps_schedule", "eta_factors"):
            kw[key] = tuple(number(v) for v in raw.split(","))
        elif key in ("method", "gradient", "init"):
            kw[key] = raw.strip()
        elif key in ("sequencing", "barriers", "clamp_iterates"):
            kw[key] = _bool(raw)
        elif key in ("max_iter", "max_steps", "reach", "threads"):
            kw[key] = int(number(raw))
        elif key == "barrier_K":
            kw[key] = raw.strip() if raw.strip() == "auto" else number(raw)
        else:
            kw[key] = number(raw)
    return SolveConfig(**kw)


def load(path, threads=None):
    """Parse and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), path) from None
    where = _lines(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None

    def fail(msg, sec, key=None):
        raise ConfigError(f"[{sec}] {key + ': ' if key else ''}{msg}", path,
                          where.get((sec, key)) or where.get((sec, None)))

    def get(sec, key, default=None, required=False):
        if cp.has_option(sec, key):
            return cp.get(sec, key)
        if required:
            fail("missing key", sec, key)
        return default

    for sec in ("problem", "grid"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]", path)
    known = {"suite", "problem", "grid", "solve", "experiments", "checks", "output"}
    for sec in cp.sections():
        if sec not in known:
            fail("unknown section", sec)

    def build(sec, key, fn, *a):
        raw = get(sec, key, required=True)
        try:
            return fn(raw, *a)
        except (ValueError, ExprError, TypeError) as exc:
            fail(str(exc), sec, key)

    dom = build("problem", "domain", parse_domain)
    op = build("problem", "operator", parse_operator)
    law = build("problem", "law", parse_law, _domain_samples(dom))
    f = build("problem", "f", Expr)
    gx = build("problem", "g", Expr)
    beta = number(get("problem", "beta_g", "0.5"))
    xi_raw = get("problem", "xi", "0, 0")
    try:
        xi = GradientShift(tuple(number(v) for v in xi_raw.split(",")))
        if len(xi.xi) != 2:
            raise ValueError("xi needs two components")
        g = BoundaryData(gx, beta_g=beta)
    except (ValueError, ExprError) as exc:
        fail(str(exc), "problem", "xi")
    exact = None
    if cp.has_option("problem", "exact"):
        exact = build("problem", "exact", Expr)
    for key in cp.options("problem"):
        if key not in ("domain", "operator", "law", "f", "g", "xi", "exact", "beta_g"):
            fail("unknown key", "problem", key)

    hs = build("grid", "h", lambda s: [number(v) for v in s.split(",")])
    try:
        rb = ball_condition_radius(dom)
    except ValueError as exc:
        fail(str(exc), "problem", "domain")
    for h in hs:
        if not 0 < h < rb / 4:
            fail(f"h = {h:g} must lie in (0, ball radius / 4 = {rb / 4:g})", "grid", "h")
    if sorted(hs, reverse=True) != hs or len(set(hs)) != len(hs):
        fail("levels must be strictly decreasing", "grid", "h")

    try:
        scfg = _solve_config(dict(cp.items("solve")) if cp.has_section("solve") else {})
    except KeyError as exc:
        fail("unknown key", "solve", exc.args[0])
    except (ValueError, ExprError) as exc:
        fail(str(exc), "solve")
    if threads is not None:
        scfg.threads = threads

    exps = [e.strip() for e in get("experiments", "run", "solve").split(",") if e.strip()] \
        if cp.has_section("experiments") else ["solve"]
    for e in exps:
        if e not in EXPERIMENTS:
            fail(f"unknown experiment {e!r}", "experiments", "run")

    checks = dict(CHECK_DEFAULTS)
    if cp.has_section("checks"):
        for key, raw in cp.items("checks"):
            if key not in CHECK_DEFAULTS:
                fail("unknown key", "checks", key)
            try:
                if key == "error_tol":
                    Expr(raw, {"h": 1.0})
                elif key in ("abp_scales", "alpha_center"):
                    [number(v) for v in raw.split(",")]
                else:
                    number(raw)
            except ExprError as exc:
                fail(str(exc), "checks", key)
            checks[key] = raw

    problem = Problem(dom, op, law, f, g, xi)
    return ExperimentConfig(
        name=path.stem,
        description=get("suite", "description", "") if cp.has_section("suite") else "",
        problem=problem, hs=hs, solve=scfg, experiments=exps, checks=checks, exact=exact,
        out=get("output", "dir") if cp.has_section("output") else None,
        source={s: dict(cp.items(s)) for s in cp.sections()})
