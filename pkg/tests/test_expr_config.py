import numpy as np
import pytest

from fnlab.config import ConfigError, load, parse_domain, parse_law, parse_operator
from fnlab.expr import Expr, ExprError, number
from fnlab.geometry import Annulus, Ball, Ellipse, HalfGraph
from fnlab.operators import apply_operator

P = np.array([[0.3, -0.4], [1.0, 2.0]])


@pytest.mark.parametrize("text, want", [
    ("1 + 2*3", 7.0),
    ("2^3^2", 2.0 ** 9),          # right associative
    ("-2^2", -4.0),               # ^ binds tighter than unary minus
    ("(1 + 1)/4", 0.5),
    ("sqrt(3)*3", np.sqrt(3) * 3),
    ("max(1, 2) - min(1, 2)", 1.0),
    ("exp(0) + log(e) + cos(pi)", 1.0),
    ("1/64", 1 / 64),
])
def test_number(text, want):
    assert number(text) == pytest.approx(want)


def test_point_expressions():
    assert np.allclose(Expr("x1 + 2*x2")(P), P[:, 0] + 2 * P[:, 1])
    assert np.allclose(Expr("norm(x)^(4/3)")(P), np.linalg.norm(P, axis=1) ** (4 / 3))
    assert np.allclose(Expr("abs(x1)")(P), np.abs(P[:, 0]))
    # constants broadcast to the point shape
    assert Expr("2")(P).shape == (2,)
    assert Expr("h^2", {"h": 0.5})(P)[0] == 0.25
    assert Expr("x1").is_constant is False and Expr("pi").is_constant


@pytest.mark.parametrize("text, col", [
    ("x^2 + foo", 7),
    ("x1^2^3 + y", 10),
    ("1 +* 2", 4),
    ("abs(x, 2)", 1),
    ("2 + open(1)", 5),
    ("x1 % 2", 1),
    ("x1 < 2", 1),
    ("'a'", 1),
])
def test_errors_report_columns(text, col):
    with pytest.raises(ExprError) as exc:
        Expr(text)
    assert exc.value.col == col and f"column {col}" in str(exc.value)


def test_disallowed_syntax():
    for text in ("", "__import__('os')", "x.real", "[1, 2]", "lambda: 1", "abs(x=1)", "True"):
        with pytest.raises(ExprError):
            Expr(text)
    with pytest.raises(ExprError):
        number("x1 + 1")


def test_parse_domain():
    assert isinstance(parse_domain("ball(0, 0, 1)"), Ball)
    e = parse_domain("ellipse(0.5, 0, 2, 1)")
    assert isinstance(e, Ellipse) and (e.a, e.b) == (2.0, 1.0)
    assert isinstance(parse_domain("annulus(0, 0, 1, 2)"), Annulus)
    assert isinstance(parse_domain("halfgraph(0.5, 1)"), HalfGraph)
    for bad in ("ball(0, 1)", "square(1)", "ball 1", "ball(0, 0, x1)"):
        with pytest.raises(ValueError):
            parse_domain(bad)


def test_parse_operator_and_law():
    M = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert apply_operator(parse_operator("pucci+(1, 2)"), M) == pytest.approx(1.0)
    assert apply_operator(parse_operator("pucci-(1, 2)"), M) == pytest.approx(-1.0)
    assert apply_operator(parse_operator("laplacian"), M) == pytest.approx(0.0)
    assert apply_operator(parse_operator("linear(2, 0, 1, 1, 2)"), M) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        parse_operator("laplacian(1)")
    with pytest.raises(ValueError):
        parse_operator("pucci(1, 2)")
    samples = np.array([[0.0, 0.0], [0.5, 0.5]])
    assert parse_law("power(-1/2)", samples).i_phi == -0.5
    assert parse_law("double_phase(1, 3, 0.5)", samples).s_phi == 3.0
    law = parse_law("variable_exponent(1 + x1)", samples)
    assert (law.i_phi, law.s_phi) == (1.0, 1.5)
    with pytest.raises(ValueError):
        parse_law("gauss(1)", samples)


GOOD = """\
[suite]
description = test problem

[problem]
domain = ball(0, 0, 1)
operator = pucci+(1, 2)
law = power(1)
f = 1 + x1^2
g = x2
xi = 0.1, -0.2

[grid]
h = 1/16, 1/32

[solve]
eps_schedule = 1e-1, 1e-2
method = explicit

[experiments]
run = solve, abp

[checks]
error_tol = 5*h
"""


def write(tmp_path, text, name="t.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_good(tmp_path):
    cfg = load(write(tmp_path, GOOD), threads=2)
    assert cfg.name == "t" and cfg.description == "test problem"
    assert cfg.hs == [1 / 16, 1 / 32]
    assert cfg.solve.eps_schedule == (0.1, 0.01) and cfg.solve.method == "explicit"
    assert cfg.solve.threads == 2
    assert cfg.experiments == ["solve", "abp"]
    assert cfg.checks["error_tol"] == "5*h" and cfg.checks["trials"] == "10000"
    assert np.array_equal(cfg.problem.xi.vector, [0.1, -0.2])
    assert cfg.problem.forcing(np.array([[2.0, 0.0]]))[0] == 5.0


@pytest.mark.parametrize("old, new, line, needle", [
    ("law = power(1)", "law = power(1", 7, "law"),
    ("f = 1 + x1^2", "f = 1 + y", 8, "unknown name"),
    ("h = 1/16, 1/32", "h = 1/2", 13, "ball radius / 4"),
    ("h = 1/16, 1/32", "h = 1/32, 1/16", 13, "strictly decreasing"),
    ("method = explicit", "method = newton", 16, "method"),
    ("method = explicit", "colour = red", 17, "unknown key"),
    ("run = solve, abp", "run = solve, dance", 20, "unknown experiment"),
    ("error_tol = 5*h", "error_tolerance = 5", 23, "unknown key"),
    ("error_tol = 5*h", "error_tol = 5*k", 23, "unknown name"),
    ("[checks]", "[extras]", 22, "unknown section"),
    ("g = x2\n", "", 4, "missing key"),  # reported at the section header
])
def test_load_errors_carry_line_numbers(tmp_path, old, new, line, needle):
    with pytest.raises(ConfigError) as exc:
        load(write(tmp_path, GOOD.replace(old, new)))
    assert needle in str(exc.value)
    if line is not None:
        assert exc.value.line is not None and abs(exc.value.line - line) <= 1


def test_load_missing_section_and_file(tmp_path):
    with pytest.raises(ConfigError):
        load(write(tmp_path, GOOD.split("[grid]")[0]))
    with pytest.raises(ConfigError):
        load(tmp_path / "nope.cfg")


def test_bundled_suites_load():
    from fnlab.cli import list_suites
    suites = list_suites()
    assert {n for n, _ in suites} >= {"laplacian_ball", "pucci_ball", "sharp_p2",
                                      "singular_p_half", "abp_sweep", "barrier_sweep"}
    assert not any(d.startswith("(invalid") for _, d in suites)
