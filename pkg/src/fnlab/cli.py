"""
Command-line experiment runner.

    fnlab run <config> [--out DIR] [--threads K] [--seed N]
    fnlab list-suites [--suites-dir DIR]

Exit codes: 0 all requested checks passed, 1 a check failed, 2 bad
configuration or usage, 3 solver non-convergence.
"""

import argparse
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis as A
from .config import ConfigError, load
from .degeneracy import check_a2
from .expr import Expr, number
from .geometry import HalfGraph, build_grid
from .operators import check_uniform_ellipticity
from .scheme import SchemeParams, Stencil, discretize, monotonicity_check
from .solver import NonConvergence, Problem, build_subsolution, build_supersolution, solve_dirichlet

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONV = 0, 1, 2, 3


class Run:
    """Collects metrics (for report.csv) and pass/fail checks (for summary.txt)."""

    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.seed = seed
        self.metrics = []
        self.checks = []
        self.notes = []
        self.solutions = []
        self.reports = []

    def metric(self, name, value):
        self.metrics.append((name, value))

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def num(self, key):
        raw = self.cfg.checks[key]
        return None if raw is None else float(number(raw))

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.checks)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------- experiments

def exp_solve(run):
    cfg, p = run.cfg, run.cfg.problem
    errs = []
    for k, h in enumerate(cfg.hs):
        u, rep = solve_dirichlet(p, h, cfg.solve)
        run.solutions.append(u)
        run.reports.append(rep)
        run.metric(f"level{k}.h", h)
        run.metric(f"level{k}.nodes", rep.n_interior)
        run.metric(f"level{k}.iterations", sum(rep.iterations))
        run.metric(f"level{k}.residual", max(rep.residuals))
        for j, d in enumerate(rep.deltas[1:], 1):
            run.metric(f"level{k}.delta{j}", d)
        run.metric(f"level{k}.lipschitz", rep.lipschitz)
        run.metric(f"level{k}.holder_half", rep.holder)
        if cfg.exact is not None:
            e = float(np.abs(u.interior - cfg.exact(u.grid.interior)).max())
            errs.append(e)
            run.metric(f"level{k}.error", e)
            if cfg.checks["error_tol"] is not None:
                tol = float(Expr(cfg.checks["error_tol"], {"h": h})(np.zeros((1, 2)))[0])
                run.check(f"error h={h:g}", e <= tol, f"{e:.3e} <= {tol:.3e}")
        d = rep.deltas[1:]
        if len(d) >= 3:
            run.check(f"eps-deltas decrease h={h:g}", d[-1] < d[-2] < d[-3],
                      ", ".join(f"{x:.2e}" for x in d[-3:]))
    if len(errs) >= 2:
        rates = [np.log(errs[i] / errs[i + 1]) / np.log(cfg.hs[i] / cfg.hs[i + 1])
                 for i in range(len(errs) - 1)]
        fit = float(np.polyfit(np.log(cfg.hs), np.log(errs), 1)[0])
        for i, r in enumerate(rates):
            run.metric(f"rate{i}", r)
        run.metric("rate_fit", fit)
        rmin = run.num("rate_min")
        if rmin is not None:
            run.check("convergence rate", fit >= rmin, f"{fit:.3f} >= {rmin:g}")
    # smallness regime: every problem must rescale into it
    u = run.solutions[-1]
    z = _anchor(run)
    sm = A.smallness_rescale(u, p.f, p.boundary, p.law, run.num("eps0"), x0=z)
    run.metric("smallness.K", sm.K)
    run.metric("smallness.r", sm.r)
    run.metric("smallness.u_sup", sm.u_sup)
    run.metric("smallness.f_sup", sm.f_sup)
    run.metric("smallness.ball_nodes", sm.ball_nodes)
    run.check("smallness rescale", sm.ok, f"|u|={sm.u_sup:.3g} <= 1, |f|={sm.f_sup:.3g} <= {sm.eps0:g}")


def _anchor(run):
    dom = run.cfg.problem.domain
    raw = run.cfg.checks["alpha_center"]
    if raw is not None:
        return np.array([number(v) for v in raw.split(",")])
    if isinstance(dom, HalfGraph):
        return np.zeros(2)
    return dom.boundary_samples(64)[0][0]


def exp_abp(run):
    cfg, p = run.cfg, run.cfg.problem
    cs = []
    for k, u in enumerate(run.solutions):
        r = A.abp_verify(u, p.boundary, p.f, p.law, p.operator.ellipticity, p.domain)
        cs.append(r.constant_fit)
        run.metric(f"abp.level{k}.lhs", r.lhs)
        run.metric(f"abp.level{k}.f_norm", r.f_norm)
        run.metric(f"abp.level{k}.c", r.constant_fit)
    spread = A.relative_spread(cs)
    run.metric("abp.spread", spread)
    run.check("abp constant stable", spread <= run.num("abp_spread"),
              f"spread {spread:.3f} <= {run.num('abp_spread'):g}")
    raw = cfg.checks["abp_scales"]
    if raw is None:
        return
    scales = [number(v) for v in raw.split(",")]
    h = cfg.hs[-1]
    sups = []
    for s in scales:
        fs = p.f if s == 1 else (lambda x, s=s: s * p.forcing(x))
        ps = Problem(p.domain, p.operator, p.law, fs, p.boundary, p.xi)
        u, _ = solve_dirichlet(ps, h, cfg.solve)
        sups.append(float(np.abs(u.interior).max()))
    expo = 1.0 / (1.0 + p.law.i_phi)
    tol = run.num("abp_exponent_tol")
    for s, m in zip(scales, sups):
        ratio = m / sups[0]
        want = (s / scales[0]) ** expo
        run.metric(f"abp.scale{s:g}.sup", m)
        if s != scales[0]:
            run.check(f"abp scaling x{s:g}", abs(ratio / want - 1) <= tol,
                      f"ratio {ratio:.4f} vs {want:.4f}")
    run.metric("abp.scaling_exponent", A.scaling_exponent(scales, sups))


def exp_barrier(run):
    cfg, p = run.cfg, run.cfg.problem
    tol = run.num("sandwich_tol")
    if isinstance(p.domain, HalfGraph):
        run.notes.append("barrier: skipped (local chart has no closed boundary)")
        return
    for k, (u, rep) in enumerate(zip(run.solutions, run.reports)):
        b = getattr(rep, "barriers", None)
        if b is None:
            w, Kw = build_supersolution(u.grid, p, cfg.solve.barrier_K, cfg=cfg.solve)
            v, Kv = build_subsolution(u.grid, p, cfg.solve.barrier_K, cfg=cfg.solve)
        else:
            v, w = b
            Kw, Kv = rep.K_super, rep.K_sub
        lo = float(np.max(v.interior - u.interior))
        hi = float(np.max(u.interior - w.interior))
        run.metric(f"barrier.level{k}.K_super", Kw)
        run.metric(f"barrier.level{k}.K_sub", Kv)
        run.metric(f"barrier.level{k}.sub_excess", lo)
        run.metric(f"barrier.level{k}.super_excess", hi)
        run.check(f"sandwich h={u.grid.h:g}", lo <= tol and hi <= tol,
                  f"max(v-u)={lo:.2e}, max(u-w)={hi:.2e}")
    # boundary distance estimate on the rescaled problem
    u = run.solutions[-1]
    z = _anchor(run)
    sm = A.smallness_rescale(u, p.f, p.boundary, p.law, run.num("eps0"), x0=z)
    gamma, rr = run.num("barrier_gamma"), run.num("barrier_r")
    delta = run.num("barrier_delta")
    if delta is None:
        strip = min(A.ball_condition_radius(p.domain), 0.5) * 0.9
        Kd = A.distance_hessian_bound(p.domain, strip) * sm.r
        delta = A.barrier_delta0(sm.law, p.operator.lam, p.operator.Lam, sm.f_sup, rr, gamma, Kd)
    run.metric("distance.delta", delta)
    chk = A.barrier_distance_check(u, p.boundary, p.domain, delta, gamma, (z, rr), scale=(sm.K, sm.r))
    run.metric("distance.nodes", chk.nodes)
    run.metric("distance.max_excess", chk.max_violation)
    run.check("boundary distance estimate", chk.passed and chk.nodes > 0,
              f"{chk.violations} violations over {chk.nodes} nodes")


def exp_comparison(run):
    cfg, p = run.cfg, run.cfg.problem
    n = int(run.num("comparison_pairs"))
    grid = run.solutions[0].grid if run.solutions else build_grid(p.domain, cfg.hs[0])
    disc = discretize(grid, p.boundary, p.operator, p.law, Stencil(cfg.solve.reach))
    rng = np.random.default_rng(run.seed)
    bad = premise = 0
    worst = -np.inf
    for _ in range(n):
        eps = float(10 ** rng.uniform(-3, -1))
        v, w, bv, bw = A.random_proper_pair(p, grid, eps, rng, disc=disc)
        r = A.comparison_verify(v, w, p, eps=eps, bv=bv, bw=bw, disc=disc)
        premise += not r.premise_ok
        bad += r.premise_ok and r.violations > 0
        if r.premise_ok:
            worst = max(worst, r.max_excess)
    run.metric("comparison.pairs", n)
    run.metric("comparison.premise_failures", premise)
    run.metric("comparison.violations", bad)
    run.metric("comparison.max_excess", worst)
    run.check("comparison on random pairs", premise == 0 and bad == 0,
              f"{bad} violations, {premise} premise failures over {n} pairs")
    if run.solutions and not isinstance(p.domain, HalfGraph):
        u = run.solutions[0]
        w, _ = build_supersolution(u.grid, p, cfg.solve.barrier_K, cfg=cfg.solve, disc=disc)
        eps = cfg.solve.eps_schedule[-1]
        r = A.comparison_verify(u, w, p, eps=eps, disc=disc, premise_tol=10 * cfg.solve.tol
                                * (1 + float(np.abs(p.forcing(u.grid.interior)).max())),
                                eta=cfg.solve.etas(u.grid.h)[-1])
        run.check("comparison solution vs supersolution", r.passed, r.premise)


def exp_regularity(run):
    cfg, p = run.cfg, run.cfg.problem
    u = run.solutions[-1]
    h = u.grid.h
    rho = run.num("alpha_rho")
    kmax = int(np.floor(np.log(run.num("alpha_min_radius") * h) / np.log(rho) + 1e-9))
    z = _anchor(run)
    tr = A.affine_fit_sequence(u, z, rho, kmax)
    tgt = A.alpha_admissible(p.law, p.boundary.beta_g, run.num("alpha_bar"))
    target = run.num("alpha_target")
    target = tgt.bounds["structure"] if target is None else target
    tol = run.num("alpha_tol")
    for k, e in enumerate(tr.errors, 1):
        run.metric(f"affine.e{k}", e)
    run.metric("affine.alpha_fit", tr.alpha)
    run.metric("affine.C0", tr.C0)
    run.metric("alpha.max", tgt.alpha_max)
    run.metric("alpha.attained", tgt.attained)
    run.metric("alpha.target", target)
    run.check("alpha fit", abs(tr.alpha - target) <= tol,
              f"{tr.alpha:.4f} vs {target:.4f} +- {tol:g}")
    for k, uu in enumerate(run.solutions):
        run.metric(f"lipschitz.level{k}", A.lipschitz_estimate(uu))


def exp_assumptions(run):
    cfg, p = run.cfg, run.cfg.problem
    n = int(run.num("trials"))
    er = check_uniform_ellipticity(p.operator, samples=n, seed=run.seed)
    run.check("uniform ellipticity", er.ok, f"{er.violations} violations")
    grid = build_grid(p.domain, cfg.hs[0])
    ar = check_a2(p.law, grid.interior, t_pairs=n, seed=run.seed)
    run.check("growth indices", ar.ok,
              f"{ar.monotonicity_violations}+{ar.normalization_violations} violations")
    disc = discretize(grid, p.boundary, p.operator, p.law, Stencil(cfg.solve.reach))
    for eps in (0.0, cfg.solve.eps_schedule[-1]):
        par = SchemeParams(eta=cfg.solve.etas(grid.h)[-1], epsilon=eps,
                           stencil=Stencil(cfg.solve.reach), gradient=cfg.solve.gradient)
        mr = monotonicity_check(disc, par, trials=n, seed=run.seed)
        run.check(f"scheme monotone eps={eps:g}", mr.ok,
                  f"{mr.violations}+{mr.center_violations} violations")


EXPERIMENT_FUNCS = {"solve": exp_solve, "abp": exp_abp, "barrier": exp_barrier,
                    "comparison": exp_comparison, "regularity": exp_regularity,
                    "assumptions": exp_assumptions}
NEEDS_SOLUTION = {"abp", "barrier", "regularity"}


# ---------------------------------------------------------------- output

def write_outputs(run, out, wall, status):
    out.mkdir(parents=True, exist_ok=True)
    if run.solutions:
        u = run.solutions[-1]
        x = u.grid.interior
        with open(out / "solution.csv", "w") as fh:
            fh.write("x,y,u\n")
            for (a, b), c in zip(x, u.interior):
                fh.write(f"{float(a)!r},{float(b)!r},{float(c)!r}\n")
    with open(out / "report.csv", "w") as fh:
        fh.write("metric,value\n")
        for k, v in run.metrics:
            fh.write(f"{k},{_fmt(v)}\n")
    cfg = run.cfg
    lines = [f"suite: {cfg.name}", f"description: {cfg.description}",
             f"domain: {cfg.source.get('problem', {}).get('domain', '')}",
             f"operator: {cfg.source.get('problem', {}).get('operator', '')}",
             f"law: {cfg.problem.law.describe()}",
             f"levels: {', '.join(f'{h:g}' for h in cfg.hs)}",
             f"experiments: {', '.join(cfg.experiments)}", ""]
    for name, ok, detail in run.checks:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    lines += [f"note: {n}" for n in run.notes]
    lines += ["", f"status: {status}", f"wall time: {wall:.2f} s", ""]
    (out / "summary.txt").write_text("\n".join(lines))


def cmd_run(args):
    try:
        cfg = load(args.config, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or cfg.out or f"out/{cfg.name}")
    run = Run(cfg, args.seed)
    t0 = time.perf_counter()
    exps = list(cfg.experiments)
    if NEEDS_SOLUTION & set(exps) and "solve" not in exps:
        exps.insert(0, "solve")
    code, status = EXIT_OK, "ok"
    try:
        for e in sorted(exps, key=lambda e: e != "solve"):
            EXPERIMENT_FUNCS[e](run)
    except NonConvergence as exc:
        code, status = EXIT_NONCONV, f"non-convergence: {exc}"
        print(status, file=sys.stderr)
    if code == EXIT_OK and not run.passed:
        code, status = EXIT_FAIL, "verification failed"
    wall = time.perf_counter() - t0
    write_outputs(run, out, wall, status)
    for name, ok, detail in run.checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    print(f"{status}; outputs in {out}")
    return code


def suites_dir():
    return Path(str(resources.files("fnlab") / "suites"))


def list_suites(directory=None):
    """(name, description) of every ``*.cfg`` in ``directory`` (default: the bundled suites)."""
    d = Path(directory) if directory else suites_dir()
    out = []
    for f in sorted(d.glob("*.cfg")) if d.is_dir() else []:
        try:
            desc = load(f).description
        except ConfigError as exc:
            desc = f"(invalid: {exc})"
        out.append((f.stem, desc))
    return out


def cmd_list(args):
    suites = list_suites(args.suites_dir)
    if not suites:
        print(f"no suites found in {args.suites_dir or suites_dir()}")
        return EXIT_OK
    width = max(len(n) for n, _ in suites)
    for name, desc in suites:
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="fnlab", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment configuration")
    r.add_argument("config", help="path to a .cfg file, or the name of a bundled suite")
    r.add_argument("--out", help="output directory (default: [output] dir or out/<name>)")
    r.add_argument("--threads", type=int, default=None, help="worker threads for node sweeps")
    r.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    r.set_defaults(func=cmd_run)
    ls = sub.add_parser("list-suites", help="list bundled experiment configurations")
    ls.add_argument("--suites-dir", default=None, help="directory to list instead of the bundled one")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run" and not Path(args.config).exists():
        cand = suites_dir() / f"{args.config}.cfg"
        if cand.exists():
            args.config = str(cand)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
