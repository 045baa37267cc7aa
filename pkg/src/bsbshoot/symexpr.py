"""Small symbolic expression language over state and parameter variables.

Expressions are trees over state variables ``x1..xn``, parameter variables
``r1..rm``, float literals, the binary operators ``+ - * /``, unary minus,
integer powers ``^``, and the functions ``sin cos exp sqrt``.  The constant
``pi`` parses to a literal.  Precedence, tightest first: power, unary minus,
``* /``, ``+ -``; binary operators associate to the left.

Construction goes through the small-constructor functions (``add``, ``mul``,
...) which perform constant folding and the 0/1 identities and nothing else,
so two expressions built from the same pieces compare structurally equal.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

from .errors import EvalDomainError, ParseError

__all__ = [
    "Expr", "Lit", "StateVar", "ParamVar", "Add", "Sub", "Mul", "Div",
    "Neg", "Pow", "Call", "lit", "state", "param", "add", "sub", "mul",
    "div", "neg", "powi", "call", "parse", "print_expr", "differentiate",
    "evaluate", "compile_expr", "vars_used",
]

FUNCTIONS = ("sin", "cos", "exp", "sqrt")


@dataclass(frozen=True)
class Lit:
    value: float


@dataclass(frozen=True)
class StateVar:
    index: int  # 1-based


@dataclass(frozen=True)
class ParamVar:
    index: int  # 1-based


@dataclass(frozen=True)
class Add:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Sub:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Mul:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Div:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Neg:
    a: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Lit, StateVar, ParamVar, Add, Sub, Mul, Div, Neg, Pow, Call]

_ZERO = Lit(0.0)
_ONE = Lit(1.0)


def _is_lit(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Lit) and (v is None or e.value == v)


# ---------------------------------------------------------------------------
# smart constructors: constant folding plus 0/1 identities, nothing more

def lit(v: float) -> Lit:
    return Lit(float(v))


def state(i: int) -> StateVar:
    if i < 1:
        raise ValueError(f"state index must be >= 1, got {i}")
    return StateVar(i)


def param(k: int) -> ParamVar:
    if k < 1:
        raise ValueError(f"parameter index must be >= 1, got {k}")
    return ParamVar(k)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Lit) and isinstance(b, Lit):
        return Lit(a.value + b.value)
    if _is_lit(a, 0.0):
        return b
    if _is_lit(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Lit) and isinstance(b, Lit):
        return Lit(a.value - b.value)
    if _is_lit(b, 0.0):
        return a
    if _is_lit(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Lit) and isinstance(b, Lit):
        return Lit(a.value * b.value)
    if _is_lit(a, 0.0) or _is_lit(b, 0.0):
        return _ZERO
    if _is_lit(a, 1.0):
        return b
    if _is_lit(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_lit(b, 1.0):
        return a
    if isinstance(a, Lit) and isinstance(b, Lit) and b.value != 0.0:
        return Lit(a.value / b.value)
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Lit):
        return Lit(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def powi(base: Expr, exponent: int) -> Expr:
    exponent = int(exponent)
    if exponent == 0:
        return _ONE
    if exponent == 1:
        return base
    if isinstance(base, Lit) and not (base.value == 0.0 and exponent < 0):
        return Lit(base.value ** exponent)
    return Pow(base, exponent)


def call(fn: str, arg: Expr) -> Expr:
    if fn not in FUNCTIONS:
        raise ValueError(f"unknown function {fn!r}")
    if isinstance(arg, Lit):
        try:
            return Lit(getattr(math, fn)(arg.value))
        except (ValueError, OverflowError):
            pass  # fold would leave the real domain; defer to evaluation
    return Call(fn, arg)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\*\*|[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "ws":
            value = match.group()
            if value == "**":
                value = "^"
            tokens.append((kind, value, match.start()))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, n_state: int, n_param: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.n_state = n_state
        self.n_param = n_param

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", offset)
        self.next()

    def parse(self) -> Expr:
        e = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {value!r}", offset)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.next()
                rhs = self.term()
                e = add(e, rhs) if value == "+" else sub(e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.next()
                rhs = self.unary()
                e = mul(e, rhs) if value == "*" else div(e, rhs)
            else:
                return e

    def unary(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.next()
            return neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, value, offset = self.peek()
        if kind == "op" and value == "^":
            self.next()
            e = powi(base, self.exponent())
            kind, value, offset = self.peek()
            if kind == "op" and value == "^":
                raise ParseError("chained exponents are not supported", offset)
            return e
        return base

    def exponent(self) -> int:
        kind, value, offset = self.peek()
        if kind == "op" and value == "(":
            self.next()
            k = self.exponent()
            self.expect_op(")")
            return k
        sign = 1
        if kind == "op" and value == "-":
            self.next()
            sign = -1
            kind, value, offset = self.peek()
        if kind != "num" or not value.isdigit():
            raise ParseError("exponent must be an integer literal", offset)
        self.next()
        return sign * int(value)

    def atom(self) -> Expr:
        kind, value, offset = self.next()
        if kind == "num":
            return Lit(float(value))
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            if value in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(value, arg)
            if value == "pi":
                return Lit(math.pi)
            m = re.fullmatch(r"x(\d+)", value)
            if m:
                i = int(m.group(1))
                if not 1 <= i <= self.n_state:
                    raise ParseError(
                        f"state variable {value!r} out of range (n={self.n_state})",
                        offset)
                return StateVar(i)
            m = re.fullmatch(r"r(\d+)", value)
            if m:
                k = int(m.group(1))
                if not 1 <= k <= self.n_param:
                    raise ParseError(
                        f"parameter {value!r} out of range (m={self.n_param})",
                        offset)
                return ParamVar(k)
            raise ParseError(f"unknown identifier {value!r}", offset)
        raise ParseError("expected a number, variable, or parenthesis", offset)


def parse(text: str, n_state: int, n_param: int) -> Expr:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Source in the expression grammar.
    n_state, n_param : int
        Declared variable counts; ``x<i>`` with ``i`` outside
        ``1..n_state`` (and likewise ``r<k>``) is rejected.

    Raises
    ------
    ParseError
        On syntax errors, unknown identifiers, or out-of-range variable
        indices; carries the character offset of the offending token.
    """
    return _Parser(text, n_state, n_param).parse()


# ---------------------------------------------------------------------------
# printing

# precedence levels used for minimal parenthesization
_LEVEL_ADD, _LEVEL_MUL, _LEVEL_NEG, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(e: Expr) -> int:
    if isinstance(e, (Add, Sub)):
        return _LEVEL_ADD
    if isinstance(e, (Mul, Div)):
        return _LEVEL_MUL
    if isinstance(e, Neg):
        return _LEVEL_NEG
    if isinstance(e, Pow):
        return _LEVEL_POW
    return _LEVEL_ATOM


def _fmt_lit(v: float) -> str:
    return repr(v)


def _print(e: Expr) -> str:
    if isinstance(e, Lit):
        return _fmt_lit(e.value)
    if isinstance(e, StateVar):
        return f"x{e.index}"
    if isinstance(e, ParamVar):
        return f"r{e.index}"
    if isinstance(e, Call):
        return f"{e.fn}({_print(e.arg)})"
    if isinstance(e, Neg):
        inner = _print(e.a)
        if _level(e.a) < _LEVEL_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        base = _print(e.base)
        if _level(e.base) < _LEVEL_ATOM:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    lvl = _level(e)
    left, right = _print(e.a), _print(e.b)
    if _level(e.a) < lvl:
        left = f"({left})"
    if _level(e.b) <= lvl:  # left associativity: parenthesize equal-level rhs
        right = f"({right})"
    return f"{left}{op}{right}"


def print_expr(e: Expr) -> str:
    """Render ``e`` with minimal parentheses; ``parse(print_expr(e))``
    recovers a structurally equal tree."""
    return _print(e)


# ---------------------------------------------------------------------------
# differentiation

_VAR_NAME_RE = re.compile(r"([xr])(\d+)")


def differentiate(e: Expr, wrt: str) -> Expr:
    """Exact derivative of ``e`` with respect to ``wrt`` ("x3", "r1", ...).

    The result is built through the folding constructors, so zero and one
    factors collapse and repeated differentiation stays compact.
    """
    m = _VAR_NAME_RE.fullmatch(wrt)
    if m is None or int(m.group(2)) < 1:
        raise ValueError(f"not a variable name: {wrt!r}")
    kind, idx = m.group(1), int(m.group(2))
    return _diff(e, kind, idx)


def _diff(e: Expr, kind: str, idx: int) -> Expr:
    if isinstance(e, Lit):
        return _ZERO
    if isinstance(e, StateVar):
        return _ONE if (kind == "x" and e.index == idx) else _ZERO
    if isinstance(e, ParamVar):
        return _ONE if (kind == "r" and e.index == idx) else _ZERO
    if isinstance(e, Add):
        return add(_diff(e.a, kind, idx), _diff(e.b, kind, idx))
    if isinstance(e, Sub):
        return sub(_diff(e.a, kind, idx), _diff(e.b, kind, idx))
    if isinstance(e, Mul):
        return add(mul(_diff(e.a, kind, idx), e.b),
                   mul(e.a, _diff(e.b, kind, idx)))
    if isinstance(e, Div):
        da, db = _diff(e.a, kind, idx), _diff(e.b, kind, idx)
        return div(sub(mul(da, e.b), mul(e.a, db)), powi(e.b, 2))
    if isinstance(e, Neg):
        return neg(_diff(e.a, kind, idx))
    if isinstance(e, Pow):
        inner = mul(lit(e.exponent), powi(e.base, e.exponent - 1))
        return mul(inner, _diff(e.base, kind, idx))
    if isinstance(e, Call):
        da = _diff(e.arg, kind, idx)
        if e.fn == "sin":
            return mul(call("cos", e.arg), da)
        if e.fn == "cos":
            return mul(neg(call("sin", e.arg)), da)
        if e.fn == "exp":
            return mul(call("exp", e.arg), da)
        if e.fn == "sqrt":
            return div(da, mul(lit(2.0), call("sqrt", e.arg)))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# evaluation

def _ev(e: Expr, q, r) -> float:
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, StateVar):
        return float(q[e.index - 1])
    if isinstance(e, ParamVar):
        return float(r[e.index - 1])
    if isinstance(e, Add):
        return _ev(e.a, q, r) + _ev(e.b, q, r)
    if isinstance(e, Sub):
        return _ev(e.a, q, r) - _ev(e.b, q, r)
    if isinstance(e, Mul):
        return _ev(e.a, q, r) * _ev(e.b, q, r)
    if isinstance(e, Div):
        den = _ev(e.b, q, r)
        if den == 0.0:
            raise EvalDomainError("division by zero")
        return _ev(e.a, q, r) / den
    if isinstance(e, Neg):
        return -_ev(e.a, q, r)
    if isinstance(e, Pow):
        base = _ev(e.base, q, r)
        if base == 0.0 and e.exponent < 0:
            raise EvalDomainError("zero raised to a negative power")
        try:
            return base ** e.exponent
        except OverflowError as exc:
            raise EvalDomainError("overflow in power") from exc
    if isinstance(e, Call):
        arg = _ev(e.arg, q, r)
        if e.fn == "sqrt" and arg < 0.0:
            raise EvalDomainError("sqrt of a negative number")
        try:
            return getattr(math, e.fn)(arg)
        except OverflowError as exc:
            raise EvalDomainError(f"overflow in {e.fn}") from exc
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expr, q, r) -> float:
    """Evaluate ``e`` at state ``q`` and parameters ``r`` (0-based
    sequences for the 1-based variables).  Raises EvalDomainError instead
    of returning a non-finite value."""
    value = _ev(e, q, r)
    if not math.isfinite(value):
        raise EvalDomainError("expression evaluated to a non-finite value")
    return value


# ---------------------------------------------------------------------------
# compilation (fast path used by the numeric layers)

_COMPILE_NS = {
    "sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt,
    "__builtins__": {},
}


def _to_py(e: Expr) -> str:
    if isinstance(e, Lit):
        return repr(e.value)
    if isinstance(e, StateVar):
        return f"q[{e.index - 1}]"
    if isinstance(e, ParamVar):
        return f"r[{e.index - 1}]"
    if isinstance(e, Add):
        return f"({_to_py(e.a)}+{_to_py(e.b)})"
    if isinstance(e, Sub):
        return f"({_to_py(e.a)}-{_to_py(e.b)})"
    if isinstance(e, Mul):
        return f"({_to_py(e.a)}*{_to_py(e.b)})"
    if isinstance(e, Div):
        return f"({_to_py(e.a)}/{_to_py(e.b)})"
    if isinstance(e, Neg):
        return f"(-{_to_py(e.a)})"
    if isinstance(e, Pow):
        return f"({_to_py(e.base)})**({e.exponent})"
    if isinstance(e, Call):
        return f"{e.fn}({_to_py(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def compile_expr(e: Expr) -> Callable[..., float]:
    """Compile ``e`` to a plain ``f(q, r) -> float`` closure.

    The compiled form skips the domain guards of :func:`evaluate` for
    speed; the numeric layers translate the raw ZeroDivisionError /
    ValueError / OverflowError back into EvalDomainError at their entry
    points.
    """
    return eval(f"lambda q, r: ({_to_py(e)})", dict(_COMPILE_NS))


def vars_used(e: Expr) -> set[str]:
    """Names of all state/parameter variables appearing in ``e``."""
    out: set[str] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, StateVar):
            out.add(f"x{node.index}")
        elif isinstance(node, ParamVar):
            out.add(f"r{node.index}")
        elif isinstance(node, (Add, Sub, Mul, Div)):
            stack.extend((node.a, node.b))
        elif isinstance(node, Neg):
            stack.append(node.a)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, Call):
            stack.append(node.arg)
    return out
