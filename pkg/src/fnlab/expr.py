"""
Arithmetic expressions over a point variable, for configuration files.

Grammar (usual precedence, ``^`` is exponentiation and binds tighter than
unary minus)::

    expr   := expr ('+' | '-') expr | expr ('*' | '/') expr | expr '^' expr
            | '-' expr | '(' expr ')' | number | name | call
    call   := func '(' expr (',' expr)* ')'
    name   := x | x1 | x2 | pi | e
    func   := abs | min | max | sqrt | norm | exp | log | sin | cos

``x`` is the point (shape (..., 2)), ``x1``/``x2`` its coordinates and
``norm`` the Euclidean norm.  Extra scalar names may be bound by the
caller.
"""

import ast

import numpy as np

_FUNCS = {
    "abs": (1, np.abs),
    "sqrt": (1, np.sqrt),
    "exp": (1, np.exp),
    "log": (1, np.log),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "norm": (1, lambda v: np.linalg.norm(v, axis=-1)),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}
_CONSTS = {"pi": np.pi, "e": np.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


class ExprError(ValueError):
    """Malformed or disallowed expression; ``col`` is the 1-based offending column when known."""

    def __init__(self, message, col=None):
        super().__init__(message if col is None else f"{message} (column {col})")
        self.col = col


class Expr:
    """
    A parsed expression; call it on points of shape (..., 2).

    Examples
    --------
    >>> Expr("(norm(x)^2 - 1)/4")(np.array([[0.0, 0.0]]))
    array([-0.25])
    """

    def __init__(self, text, names=()):
        self.text = text.strip()
        if not self.text:
            raise ExprError("empty expression")
        self.names = dict(names)
        src = self.text.replace("^", "**")
        # column in ``src`` -> column in the text as written
        self._cols = np.cumsum([0] + [2 if c == "^" else 1 for c in self.text])
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse {self.text!r}", self._col(exc.offset)) from None
        try:
            self._check(tree.body)
        except ExprError as exc:
            raise ExprError(exc.args[0].rsplit(" (column", 1)[0], self._col(exc.col)) from None
        self.tree = tree.body

    def _col(self, offset):
        if offset is None or offset < 1:
            return None
        return int(np.searchsorted(self._cols, offset - 1, side="right"))

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExprError("operator not allowed", node.col_offset + 1)
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExprError("operator not allowed", node.col_offset + 1)
            self._check(node.operand)
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExprError("only numeric literals are allowed", node.col_offset + 1)
        elif isinstance(node, ast.Name):
            if node.id not in ("x", "x1", "x2") and node.id not in _CONSTS \
                    and node.id not in self.names:
                raise ExprError(f"unknown name {node.id!r}", node.col_offset + 1)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExprError("unknown function", node.col_offset + 1)
            arity = _FUNCS[node.func.id][0]
            if node.keywords or len(node.args) != arity:
                raise ExprError(f"{node.func.id} takes {arity} argument(s)", node.col_offset + 1)
            for a in node.args:
                self._check(a)
        else:
            raise ExprError("syntax not allowed", getattr(node, "col_offset", -1) + 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        env = {"x": x, "x1": x[..., 0], "x2": x[..., 1], **_CONSTS, **self.names}
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(self._eval(self.tree, env), dtype=float)
        return np.broadcast_to(out, x.shape[:-1]).copy()

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        fn = _FUNCS[node.func.id][1]
        return fn(*(self._eval(a, env) for a in node.args))

    @property
    def is_constant(self):
        return not any(isinstance(n, ast.Name) and n.id in ("x", "x1", "x2")
                       for n in ast.walk(self.tree))

    def __repr__(self):
        return f"Expr({self.text!r})"


def number(text, names=()):
    """Evaluate a constant expression such as ``1/64`` or ``sqrt(3)*3``."""
    e = Expr(text, names)
    if not e.is_constant:
        raise ExprError(f"{text!r} must not depend on x")
    return float(e(np.zeros((1, 2)))[0])
