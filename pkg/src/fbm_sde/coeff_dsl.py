"""Coefficient expressions for scalar SDEs.

A tiny expression language over the state variable ``x``, named parameters,
numeric literals, ``+ - * /``, integer powers and the functions ``sin``,
``cos``, ``exp`` and ``tanh``.  Expressions are immutable trees; symbolic
derivatives are exact (constant folding only, no other simplification).

Precedence, tightest first: unary minus, ``^``, ``* /``, ``+ -``.  Note that
``-x^2`` therefore means ``(-x)^2``; write ``-(x^2)`` for the other reading.
The exponent of ``^`` must fold to an integer constant.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Param",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "ExprSyntaxError",
    "EvaluationError",
    "FUNCTIONS",
    "parse",
    "to_source",
    "differentiate",
    "evaluate",
    "compile_expr",
    "CoefficientFn",
    "AssumptionReport",
    "validate_assumptions",
]

Number = Union[float, np.ndarray]


class ExprSyntaxError(ValueError):
    """Raised on malformed expression text; ``offset`` is the byte offset."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class EvaluationError(ArithmeticError):
    """Unbound parameter, division by zero or a non-finite value."""


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


FUNCTIONS: dict[str, Callable[[Number], Number]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
}

X = Var()
ZERO = Num(0.0)
ONE = Num(1.0)


# --------------------------------------------------------------------------
# folding constructors
# --------------------------------------------------------------------------


def _is_num(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Num) and (v is None or e.value == v)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a, -1.0):
        return neg(b)
    if _is_num(b, -1.0):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0.0:
        return Num(a.value / b.value)
    if _is_num(a, 0.0) and not _is_num(b, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return Div(a, b)


def power(base: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return base
    if isinstance(base, Num) and not (base.value == 0.0 and k < 0):
        return Num(base.value**k)
    return Pow(base, k)


def call(fn: str, arg: Expr) -> Expr:
    if isinstance(arg, Num):
        return Num(float(FUNCTIONS[fn](arg.value)))
    return Call(fn, arg)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: tuple[str, str, int] | None = None) -> ExprSyntaxError:
        tok = tok or self.peek()
        return ExprSyntaxError(message, tok[2], self.source)

    def expect(self, op: str) -> None:
        tok = self.take()
        if tok[0] != "op" or tok[1] != op:
            raise self.error(f"expected {op!r}", tok)

    def parse(self) -> Expr:
        e = self.sum()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def sum(self) -> Expr:
        e = self.product()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.product()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def product(self) -> Expr:
        e = self.power()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            rhs = self.power()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def power(self) -> Expr:
        base = self.unary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            tok = self.take()
            exponent = self.power()
            k = _fold_constant(exponent)
            if k is None or not float(k).is_integer():
                raise self.error("exponent must be an integer constant", tok)
            return Pow(base, int(k))
        return base

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return neg_literal(self.unary())
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.atom()

    def atom(self) -> Expr:
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise self.error(f"unknown function {text!r}", tok)
                self.take()
                arg = self.sum()
                self.expect(")")
                return Call(text, arg)
            if text == "x":
                return X
            if text in FUNCTIONS:
                raise self.error(f"function {text!r} needs an argument", tok)
            return Param(text)
        if kind == "op" and text == "(":
            e = self.sum()
            self.expect(")")
            return e
        if kind == "end":
            raise self.error("unexpected end of input", tok)
        raise self.error(f"unexpected token {text!r}", tok)


def neg_literal(e: Expr) -> Expr:
    # -2.5 is a literal; -x stays a negation node
    return Num(-e.value) if isinstance(e, Num) else Neg(e)


def _fold_constant(e: Expr) -> float | None:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg):
        v = _fold_constant(e.arg)
        return None if v is None else -v
    if isinstance(e, (Add, Sub, Mul)):
        a, b = _fold_constant(e.left), _fold_constant(e.right)
        if a is None or b is None:
            return None
        return a + b if isinstance(e, Add) else a - b if isinstance(e, Sub) else a * b
    if isinstance(e, Pow):
        a = _fold_constant(e.base)
        if a is None or (a == 0 and e.exponent < 0):
            return None
        return a**e.exponent
    return None


def parse(source: str) -> Expr:
    """Parse expression text into an :class:`Expr` tree."""
    return _Parser(source).parse()


def to_source(e: Expr) -> str:
    """Print ``e`` as text that parses back to the same tree."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        if not math.isfinite(e.value):
            raise ValueError(f"cannot print non-finite literal {e.value}")
        return f"({text})" if e.value < 0 or text.startswith("-") else text
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    if isinstance(e, Pow):
        exp = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return f"({to_source(e.base)})^{exp}"
    ops = {Add: "+", Sub: "-", Mul: "*", Div: "/"}
    return f"({to_source(e.left)} {ops[type(e)]} {to_source(e.right)})"


# --------------------------------------------------------------------------
# calculus
# --------------------------------------------------------------------------


def differentiate(e: Expr) -> Expr:
    """Exact derivative of ``e`` with respect to ``x``."""
    if isinstance(e, (Num, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Neg):
        return neg(differentiate(e.arg))
    if isinstance(e, Add):
        return add(differentiate(e.left), differentiate(e.right))
    if isinstance(e, Sub):
        return sub(differentiate(e.left), differentiate(e.right))
    if isinstance(e, Mul):
        return add(
            mul(differentiate(e.left), e.right),
            mul(e.left, differentiate(e.right)),
        )
    if isinstance(e, Div):
        num = sub(
            mul(differentiate(e.left), e.right),
            mul(e.left, differentiate(e.right)),
        )
        return div(num, power(e.right, 2))
    if isinstance(e, Pow):
        inner = differentiate(e.base)
        return mul(mul(Num(float(e.exponent)), power(e.base, e.exponent - 1)), inner)
    if isinstance(e, Call):
        inner = differentiate(e.arg)
        if e.fn == "sin":
            outer = call("cos", e.arg)
        elif e.fn == "cos":
            outer = neg(call("sin", e.arg))
        elif e.fn == "exp":
            outer = call("exp", e.arg)
        elif e.fn == "tanh":
            outer = sub(ONE, power(call("tanh", e.arg), 2))
        else:  # pragma: no cover - parser rejects unknown names
            raise ValueError(f"unknown function {e.fn!r}")
        return mul(outer, inner)
    raise TypeError(f"not an expression: {e!r}")


def free_params(e: Expr) -> set[str]:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, (Num, Var)):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_params(e.arg)
    if isinstance(e, Pow):
        return free_params(e.base)
    return free_params(e.left) | free_params(e.right)


def is_constant(e: Expr) -> bool:
    """True when ``e`` does not mention ``x``."""
    if isinstance(e, Var):
        return False
    if isinstance(e, (Num, Param)):
        return True
    if isinstance(e, (Neg, Call)):
        return is_constant(e.arg)
    if isinstance(e, Pow):
        return is_constant(e.base)
    return is_constant(e.left) and is_constant(e.right)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def compile_expr(e: Expr, params: Mapping[str, float] | None = None) -> Callable[[Number], Number]:
    """Build a closure ``f(x)`` evaluating ``e``; works on floats and arrays.

    Parameters are bound now, so an unbound name fails here rather than on
    every call.  The closure does not check for non-finite results; use
    :func:`evaluate` when that matters.
    """
    params = dict(params or {})
    missing = free_params(e) - params.keys()
    if missing:
        raise EvaluationError(f"unbound parameter(s): {', '.join(sorted(missing))}")
    return _build(e, params)


def _build(e: Expr, params: Mapping[str, float]) -> Callable[[Number], Number]:
    if isinstance(e, Num):
        v = float(e.value)
        return lambda x: v + 0.0 * x if isinstance(x, np.ndarray) else v
    if isinstance(e, Param):
        v = float(params[e.name])
        return lambda x: v + 0.0 * x if isinstance(x, np.ndarray) else v
    if isinstance(e, Var):
        return lambda x: x
    if isinstance(e, Neg):
        f = _build(e.arg, params)
        return lambda x: -f(x)
    if isinstance(e, Call):
        f, g = FUNCTIONS[e.fn], _build(e.arg, params)
        return lambda x: f(g(x))
    if isinstance(e, Pow):
        f, k = _build(e.base, params), e.exponent
        if k < 0:
            return lambda x: _safe_div(1.0, f(x) ** (-k))
        return lambda x: f(x) ** k
    left, right = _build(e.left, params), _build(e.right, params)
    if isinstance(e, Add):
        return lambda x: left(x) + right(x)
    if isinstance(e, Sub):
        return lambda x: left(x) - right(x)
    if isinstance(e, Mul):
        return lambda x: left(x) * right(x)
    if isinstance(e, Div):
        return lambda x: _safe_div(left(x), right(x))
    raise TypeError(f"not an expression: {e!r}")


def _safe_div(num: Number, den: Number) -> Number:
    if np.any(np.asarray(den) == 0.0):
        raise EvaluationError("division by zero")
    return num / den


def evaluate(e: Expr, x: Number, params: Mapping[str, float] | None = None) -> Number:
    """Evaluate ``e`` at ``x`` (scalar or array) with parameters bound."""
    with np.errstate(over="ignore", invalid="ignore"):
        value = compile_expr(e, params)(x)
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"non-finite value of {to_source(e)}")
    return value


# --------------------------------------------------------------------------
# coefficient functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientFn:
    """A coefficient with its first three exact derivatives."""

    expr: Expr
    params: Mapping[str, float] = field(default_factory=dict)
    source: str = ""
    d1: Expr = field(init=False)
    d2: Expr = field(init=False)
    d3: Expr = field(init=False)

    def __post_init__(self) -> None:
        d1 = differentiate(self.expr)
        d2 = differentiate(d1)
        d3 = differentiate(d2)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)
        object.__setattr__(self, "d3", d3)
        object.__setattr__(self, "params", dict(self.params))
        if not self.source:
            object.__setattr__(self, "source", to_source(self.expr))
        fns = tuple(compile_expr(e, self.params) for e in (self.expr, d1, d2, d3))
        object.__setattr__(self, "_fns", fns)

    @classmethod
    def from_source(cls, source: str, params: Mapping[str, float] | None = None) -> "CoefficientFn":
        return cls(parse(source), dict(params or {}), source)

    def __call__(self, x: Number) -> Number:
        return self._fns[0](x)

    def derivative(self, x: Number, order: int = 1) -> Number:
        if not 0 <= order <= 3:
            raise ValueError("derivative order must be 0..3")
        return self._fns[order](x)

    @property
    def is_constant(self) -> bool:
        return is_constant(self.expr)

    def __getstate__(self) -> dict:
        return {"expr": self.expr, "params": dict(self.params), "source": self.source}

    def __setstate__(self, state: dict) -> None:
        object.__setattr__(self, "expr", state["expr"])
        object.__setattr__(self, "params", state["params"])
        object.__setattr__(self, "source", state["source"])
        self.__post_init__()


@dataclass
class AssumptionReport:
    min_sigma: float
    max_abs: dict[str, float]
    violations: list[str]
    warnings: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_assumptions(
    a: CoefficientFn,
    sigma: CoefficientFn,
    probe_range: tuple[float, float] = (-10.0, 10.0),
    needs_positivity: bool = True,
    bound: float = 1e3,
    points: int = 10_001,
) -> AssumptionReport:
    """Probe boundedness and positivity of the coefficients on a dense grid.

    Advisory only: a finite probe cannot certify a global bound.  Growth that
    looks unbounded (the outer 5% of the range exceeding the inner part) is
    reported too.  For constant ``sigma`` drift growth is only a warning,
    since no Lamperti transform is needed there.
    """
    lo, hi = map(float, probe_range)
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError(f"probe range must be a finite interval, got {probe_range}")
    xs = np.linspace(lo, hi, points)
    edge = (xs < lo + 0.05 * (hi - lo)) | (xs > hi - 0.05 * (hi - lo))

    violations: list[str] = []
    warnings: list[str] = []
    max_abs: dict[str, float] = {}
    sig_const = sigma.is_constant
    checks = [("a", a, 0), ("a'", a, 1), ("a''", a, 2)]
    checks += [("sigma", sigma, 0), ("sigma'", sigma, 1), ("sigma''", sigma, 2), ("sigma'''", sigma, 3)]
    with np.errstate(all="ignore"):
        for name, fn, order in checks:
            v = np.abs(np.broadcast_to(fn.derivative(xs, order), xs.shape))
            if not np.all(np.isfinite(v)):
                violations.append(f"{name} is not finite on the probe range")
                max_abs[name] = math.inf
                continue
            max_abs[name] = float(v.max())
            drift_like = name.startswith("a") and sig_const
            grows = v[edge].max() > 1.01 * v[~edge].max() + 1e-12
            if max_abs[name] > bound:
                msg = f"|{name}| reaches {max_abs[name]:.6g} > {bound:g}"
                (warnings if drift_like else violations).append(msg)
            elif grows:
                msg = f"{name} grows towards the probe boundary (possibly unbounded)"
                if drift_like:
                    msg += "; acceptable for constant diffusion"
                    warnings.append(msg)
                elif order == 0:
                    violations.append(msg)
                else:
                    warnings.append(msg)
        min_sigma = float(np.min(np.broadcast_to(sigma(xs), xs.shape)))
    if min_sigma <= 0.0:
        msg = f"sigma is not positive on the probe range (min {min_sigma:.6g})"
        (violations if needs_positivity else warnings).append(msg)
    return AssumptionReport(min_sigma, max_abs, violations, warnings)
