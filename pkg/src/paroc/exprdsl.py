"""Small expression language for problem data.

Expressions are built over the time variable ``t``, state components ``x[i]``,
control components ``u[j]``, named parameters, the arithmetic operators
``+ - * / ^`` (with ``^`` right-associative and binding tighter than unary
minus), and the functions ``sin cos exp log sqrt abs min max``.  ``min`` and
``max`` take exactly two arguments.  The internal three-argument ``sel(c,a,b)``
(``a`` if ``c >= 0`` else ``b``) only appears in derivatives of the nonsmooth
functions but is accepted by the parser so that printing round-trips.

Public surface: :func:`parse`, :func:`pretty`, :func:`evaluate`,
:func:`differentiate`, :func:`compile_expr`, :func:`validate`,
:func:`contains_kinks`, :func:`shift_state` plus the node constructors.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr", "Num", "TimeVar", "StateVar", "ControlVar", "Param", "Neg",
    "BinOp", "Call", "ExprError", "ExprSyntaxError", "ExprEvalError",
    "parse", "pretty", "evaluate", "differentiate", "compile_expr",
    "validate", "contains_kinks", "shift_state",
    "num", "add", "sub", "mul", "div", "powx", "neg",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Parse failure; ``offset`` is the byte offset into the source string."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprEvalError(ExprError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Expr:
    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __sub__(self, other):
        return sub(self, _as_expr(other))

    def __rsub__(self, other):
        return sub(_as_expr(other), self)

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class TimeVar(Expr):
    pass


@dataclass(frozen=True)
class StateVar(Expr):
    index: int


@dataclass(frozen=True)
class ControlVar(Expr):
    index: int


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple[Expr, ...]


_ARITY = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1,
          "min": 2, "max": 2, "sel": 3}
_KINK_FUNCS = {"abs", "min", "max", "sel"}


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Num(float(v))


# Smart constructors fold constants so that derivative trees stay small.

def num(v: float) -> Num:
    return Num(float(v))


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if isinstance(a, Num) and a.value == 0.0:
        return b
    if isinstance(b, Num) and b.value == 0.0:
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and a.value == 0.0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if isinstance(a, Num):
        if a.value == 0.0:
            return Num(0.0)
        if a.value == 1.0:
            return b
    if isinstance(b, Num):
        if b.value == 0.0:
            return Num(0.0)
        if b.value == 1.0:
            return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and a.value == 0.0:
        return Num(0.0)
    if isinstance(b, Num) and b.value == 1.0:
        return a
    return BinOp("/", a, b)


def powx(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Num):
        if b.value == 1.0:
            return a
        if b.value == 0.0:
            return Num(1.0)
    return BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(r"""
    (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()\[\],])
  | (?P<ws>\s+)
""", re.VERBOSE)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.next()
        if text != value:
            raise ExprSyntaxError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            rhs = self.term()
            e = BinOp(op, e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            rhs = self.unary()
            e = BinOp(op, e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.next()
            # right-associative; exponent may carry a unary minus
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.next()
        if kind == "num":
            return Num(float(text))
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if text in ("x", "u"):
                self.expect("[")
                ik, itext, ipos = self.next()
                if ik != "num" or not itext.isdigit():
                    raise ExprSyntaxError("expected integer index", ipos)
                self.expect("]")
                idx = int(itext)
                return StateVar(idx) if text == "x" else ControlVar(idx)
            if text == "t":
                return TimeVar()
            if self.peek()[1] == "(":
                if text not in _ARITY:
                    raise ExprSyntaxError(f"unknown function {text!r}", pos)
                self.next()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != _ARITY[text]:
                    raise ExprSyntaxError(
                        f"{text} takes {_ARITY[text]} argument(s), got {len(args)}", pos)
                return Call(text, tuple(args))
            return Param(text)
        raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", pos)


def parse(source: str) -> Expr:
    """Parse ``source`` into an Expr; raises ExprSyntaxError with byte offset."""
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Num) and e.value < 0:
        return _PREC["neg"]
    return _PREC["atom"]


def _wrap(s: str, need: bool) -> str:
    return f"({s})" if need else s


def pretty(e: Expr) -> str:
    """Render to source text; ``parse(pretty(e))`` evaluates identically to e."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, TimeVar):
        return "t"
    if isinstance(e, StateVar):
        return f"x[{e.index}]"
    if isinstance(e, ControlVar):
        return f"u[{e.index}]"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(pretty(e.arg), _prec(e.arg) < _PREC["neg"])
    if isinstance(e, Call):
        return f"{e.name}({', '.join(pretty(a) for a in e.args)})"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        ls = _wrap(pretty(e.left), _prec(e.left) < p or (e.op == "^" and _prec(e.left) <= p))
        right_tighter = p + 1 if e.op in ("-", "/") else p
        if e.op == "^":
            right_tighter = _PREC["neg"]  # exponent parses at unary level
        rs = _wrap(pretty(e.right), _prec(e.right) < right_tighter)
        return f"{ls} {e.op} {rs}" if e.op in "+-" else f"{ls}{e.op}{rs}"
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation

def _pow_value(a, b):
    if a < 0 and b != round(b):
        raise ExprEvalError(f"negative base {a} with non-integer exponent {b}")
    return a ** b


def evaluate(e: Expr, t: float = 0.0, x=(), u=(), params: dict | None = None) -> float:
    params = params or {}

    def ev(node: Expr) -> float:
        if isinstance(node, Num):
            return node.value
        if isinstance(node, TimeVar):
            return float(t)
        if isinstance(node, StateVar):
            try:
                return float(x[node.index])
            except IndexError:
                raise ExprEvalError(f"state index {node.index} out of range") from None
        if isinstance(node, ControlVar):
            try:
                return float(u[node.index])
            except IndexError:
                raise ExprEvalError(f"control index {node.index} out of range") from None
        if isinstance(node, Param):
            try:
                return float(params[node.name])
            except KeyError:
                raise ExprEvalError(f"unknown identifier {node.name!r}") from None
        if isinstance(node, Neg):
            return -ev(node.arg)
        if isinstance(node, BinOp):
            a = ev(node.left)
            b = ev(node.right)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                if b == 0.0:
                    raise ExprEvalError("division by zero")
                return a / b
            return _pow_value(a, b)
        if isinstance(node, Call):
            vals = [ev(a) for a in node.args]
            if node.name == "sel":
                return vals[1] if vals[0] >= 0.0 else vals[2]
            if node.name == "log":
                if vals[0] <= 0.0:
                    raise ExprEvalError(f"log of non-positive value {vals[0]}")
                return math.log(vals[0])
            if node.name == "sqrt":
                if vals[0] < 0.0:
                    raise ExprEvalError(f"sqrt of negative value {vals[0]}")
                return math.sqrt(vals[0])
            if node.name == "abs":
                return abs(vals[0])
            if node.name == "min":
                return min(vals)
            if node.name == "max":
                return max(vals)
            return getattr(math, node.name)(vals[0])
        raise TypeError(f"not an Expr: {node!r}")

    return ev(e)


# ---------------------------------------------------------------------------
# Differentiation

def _parse_var(var: str):
    if var == "t":
        return ("t", 0)
    m = re.fullmatch(r"([xu])\[(\d+)\]", var)
    if m is None:
        raise ExprError(f"bad differentiation variable {var!r}; use 't', 'x[i]' or 'u[j]'")
    return (m.group(1), int(m.group(2)))


def differentiate(e: Expr, var: str) -> Expr:
    """Exact symbolic partial derivative with respect to t, x[i] or u[j].

    At abs/min/max kinks the branch active on the >= side of the switch is
    used; check :func:`contains_kinks` on the input to detect that case.
    """
    kind, index = _parse_var(var)

    def d(node: Expr) -> Expr:
        if isinstance(node, (Num, Param)):
            return Num(0.0)
        if isinstance(node, TimeVar):
            return Num(1.0 if kind == "t" else 0.0)
        if isinstance(node, StateVar):
            return Num(1.0 if kind == "x" and node.index == index else 0.0)
        if isinstance(node, ControlVar):
            return Num(1.0 if kind == "u" and node.index == index else 0.0)
        if isinstance(node, Neg):
            return neg(d(node.arg))
        if isinstance(node, BinOp):
            a, b = node.left, node.right
            da, db = d(a), d(b)
            if node.op == "+":
                return add(da, db)
            if node.op == "-":
                return sub(da, db)
            if node.op == "*":
                return add(mul(da, b), mul(a, db))
            if node.op == "/":
                return sub(div(da, b), div(mul(a, db), mul(b, b)))
            # power
            if isinstance(b, Num):
                c = b.value
                return mul(mul(Num(c), powx(a, Num(c - 1.0))), da)
            # general a^b = exp(b log a)
            return mul(powx(a, b), add(mul(db, Call("log", (a,))),
                                       div(mul(b, da), a)))
        if isinstance(node, Call):
            if node.name == "sin":
                return mul(Call("cos", node.args), d(node.args[0]))
            if node.name == "cos":
                return neg(mul(Call("sin", node.args), d(node.args[0])))
            if node.name == "exp":
                return mul(node, d(node.args[0]))
            if node.name == "log":
                return div(d(node.args[0]), node.args[0])
            if node.name == "sqrt":
                return div(d(node.args[0]), mul(Num(2.0), node))
            if node.name == "abs":
                a = node.args[0]
                return mul(Call("sel", (a, Num(1.0), Num(-1.0))), d(a))
            if node.name == "min":
                a, b = node.args
                return Call("sel", (sub(b, a), d(a), d(b)))
            if node.name == "max":
                a, b = node.args
                return Call("sel", (sub(a, b), d(a), d(b)))
            if node.name == "sel":
                c, a, b = node.args
                return Call("sel", (c, d(a), d(b)))
        raise TypeError(f"not an Expr: {node!r}")

    return d(e)


def contains_kinks(e: Expr) -> bool:
    if isinstance(e, Call):
        if e.name in _KINK_FUNCS:
            return True
        return any(contains_kinks(a) for a in e.args)
    if isinstance(e, BinOp):
        return contains_kinks(e.left) or contains_kinks(e.right)
    if isinstance(e, Neg):
        return contains_kinks(e.arg)
    return False


def validate(e: Expr, n: int, k: int, params: dict | None = None) -> None:
    """Check indices against dimensions and parameter names against ``params``."""
    params = params or {}

    def walk(node: Expr):
        if isinstance(node, StateVar) and not (0 <= node.index < n):
            raise ExprError(f"state index {node.index} out of range for n={n}")
        if isinstance(node, ControlVar) and not (0 <= node.index < k):
            raise ExprError(f"control index {node.index} out of range for k={k}")
        if isinstance(node, Param) and node.name not in params:
            raise ExprError(f"unknown identifier {node.name!r}")
        if isinstance(node, BinOp):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Neg):
            walk(node.arg)
        elif isinstance(node, Call):
            for a in node.args:
                walk(a)

    walk(e)


def shift_state(e: Expr, offset: int) -> Expr:
    """Rewrite every x[i] to x[i+offset]; used by the state-augmentation step."""
    if isinstance(e, StateVar):
        return StateVar(e.index + offset)
    if isinstance(e, Neg):
        return Neg(shift_state(e.arg, offset))
    if isinstance(e, BinOp):
        return BinOp(e.op, shift_state(e.left, offset), shift_state(e.right, offset))
    if isinstance(e, Call):
        return Call(e.name, tuple(shift_state(a, offset) for a in e.args))
    return e


# ---------------------------------------------------------------------------
# Compilation to python callables

def _np_pow(a, b):
    bad = np.logical_and(np.asarray(a) < 0, np.asarray(b) != np.round(b))
    if np.any(bad):
        raise ExprEvalError("negative base with non-integer exponent")
    return np.power(a, b)


def _np_div(a, b):
    if np.any(np.asarray(b) == 0.0):
        raise ExprEvalError("division by zero")
    return np.divide(a, b)


def _np_log(a):
    if np.any(np.asarray(a) <= 0.0):
        raise ExprEvalError("log of non-positive value")
    return np.log(a)


def _np_sqrt(a):
    if np.any(np.asarray(a) < 0.0):
        raise ExprEvalError("sqrt of negative value")
    return np.sqrt(a)


def _np_sel(c, a, b):
    return np.where(np.asarray(c) >= 0.0, a, b)


_NUMPY_ENV = {
    "_sin": np.sin, "_cos": np.cos, "_exp": np.exp, "_log": _np_log,
    "_sqrt": _np_sqrt, "_abs": np.abs, "_min": np.minimum, "_max": np.maximum,
    "_sel": _np_sel, "_pow": _np_pow, "_div": _np_div,
}


def _math_sel(c, a, b):
    return a if c >= 0.0 else b


def _math_div(a, b):
    if b == 0.0:
        raise ExprEvalError("division by zero")
    return a / b


def _math_log(a):
    if a <= 0.0:
        raise ExprEvalError("log of non-positive value")
    return math.log(a)


def _math_sqrt(a):
    if a < 0.0:
        raise ExprEvalError("sqrt of negative value")
    return math.sqrt(a)


_MATH_ENV = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_log": _math_log,
    "_sqrt": _math_sqrt, "_abs": abs, "_min": min, "_max": max,
    "_sel": _math_sel, "_pow": _pow_value, "_div": _math_div,
}


def _codegen(e: Expr, params: dict) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, TimeVar):
        return "t"
    if isinstance(e, StateVar):
        return f"x[{e.index}]"
    if isinstance(e, ControlVar):
        return f"u[{e.index}]"
    if isinstance(e, Param):
        try:
            return repr(float(params[e.name]))
        except KeyError:
            raise ExprError(f"unknown identifier {e.name!r}") from None
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg, params)})"
    if isinstance(e, BinOp):
        a = _codegen(e.left, params)
        b = _codegen(e.right, params)
        if e.op == "^":
            return f"_pow({a}, {b})"
        if e.op == "/":
            return f"_div({a}, {b})"
        return f"({a} {e.op} {b})"
    if isinstance(e, Call):
        args = ", ".join(_codegen(a, params) for a in e.args)
        return f"_{e.name}({args})"
    raise TypeError(f"not an Expr: {e!r}")


def compile_expr(e: Expr, params: dict | None = None, mode: str = "numpy"):
    """Compile to ``fn(t, x, u) -> value``; parameters are inlined as constants.

    mode="numpy" broadcasts over array arguments (components indexed along the
    first axis); mode="math" is a lower-overhead scalar variant for tight
    integration loops.
    """
    src = _codegen(e, params or {})
    env = dict(_NUMPY_ENV if mode == "numpy" else _MATH_ENV)
    return eval(f"lambda t, x, u: {src}", env)  # noqa: S307 - trusted generated code
