"""Small expression language for matrix-field entries and test functions.

Grammar (lowest to highest binding)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' ['-'] INT)*
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Exponents are integer literals only, so ``diff`` stays closed over the
function set {sin, cos, exp, sqrt}.  ``i`` is the imaginary unit and ``pi``
is a constant.  Variables are ``x1..xn``, ``th1..thn`` and ``s``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt")
CONSTANTS = ("i", "pi")

_VAR_RE = re.compile(r"^(x|th)([1-9][0-9]*)$")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvalError(ExprError):
    pass


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: complex


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exp: int


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Num, Var, Const, Neg, BinOp, Pow, Call]


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    data = text.encode("utf-8")
    out = []
    pos = 0
    # work on the decoded string but report byte offsets
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            while text[pos].isspace():
                pos += 1
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode("utf-8")))
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), len(text[:start].encode("utf-8"))))
        pos = m.end()
    out.append(("end", "", len(data)))
    return out


class _Parser:
    def __init__(self, text: str, n: int | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.next()
        if val != value or kind == "end":
            raise ParseError(f"expected {value!r}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.next()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.next()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.next()
            sign = 1
            if self.peek()[0] == "op" and self.peek()[1] == "-":
                self.next()
                sign = -1
            kind, val, off = self.next()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be an integer literal", off)
            e = Pow(e, sign * int(val))
        return e

    def atom(self) -> Expr:
        kind, val, off = self.next()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return Call(val, e)
            if val in CONSTANTS:
                return Const(val)
            if val == "s":
                return Var(val)
            m = _VAR_RE.match(val)
            if m and (self.n is None or int(m.group(2)) <= self.n):
                return Var(val)
            raise ParseError(f"unknown identifier {val!r}", off)
        if kind == "end":
            raise ParseError("unexpected end of input", off)
        raise ParseError(f"unexpected token {val!r}", off)


def parse(text: str, n: int | None = None) -> Expr:
    """Parse ``text``; with ``n`` given, only x1..xn and th1..thn are legal."""
    return _Parser(text, n).parse()


# --- printing --------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_num(v: complex) -> str:
    v = complex(v)
    if v.imag == 0.0:
        r = v.real
        if r < 0 or math.copysign(1.0, r) < 0:
            return f"(-{_fmt_real(-r)})"
        return _fmt_real(r)
    return f"({_fmt_real(v.real)}+{_fmt_real(v.imag)}*i)".replace("+-", "-")


def _fmt_real(r: float) -> str:
    if math.isinf(r) or math.isnan(r):
        raise ExprError("cannot print non-finite constant")
    return repr(float(r))


def to_string(e: Expr) -> str:
    return _print(e, 0)


def _print(e: Expr, ctx: int) -> str:
    # ctx: binding power of the surrounding position
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, (Var, Const)):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({_print(e.arg, 0)})"
    if isinstance(e, Pow):
        s = f"{_print(e.base, 5)}^{e.exp}"
        return f"({s})" if ctx > 4 else s
    if isinstance(e, Neg):
        s = "-" + _print(e.arg, 3)
        return f"({s})" if ctx > 3 else s
    p = _PREC[e.op]
    s = f"{_print(e.left, p)}{e.op}{_print(e.right, p + 1)}"
    return f"({s})" if ctx > p else s


# --- evaluation ------------------------------------------------------------

_FN = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}


def evaluate(e: Expr, bindings: Mapping[str, object]):
    """Evaluate to a complex scalar or complex ndarray (broadcast over bindings)."""
    with np.errstate(all="ignore"):
        out = _eval(e, bindings)
    return np.asarray(out, dtype=complex) if np.ndim(out) else complex(out)


def _eval(e: Expr, b: Mapping[str, object]):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Const):
        return 1j if e.name == "i" else math.pi
    if isinstance(e, Var):
        if e.name not in b:
            raise EvalError(f"unbound variable {e.name!r}")
        v = b[e.name]
        return np.asarray(v, dtype=complex) if np.ndim(v) else complex(v)
    if isinstance(e, Neg):
        return -_eval(e.arg, b)
    if isinstance(e, Call):
        return _FN[e.fn](np.asarray(_eval(e.arg, b), dtype=complex))
    if isinstance(e, Pow):
        base = _eval(e.base, b)
        if e.exp < 0:
            if np.any(np.asarray(base) == 0):
                raise EvalError(f"division by zero in {to_string(e)!r}")
            return 1.0 / base ** (-e.exp)
        return base ** e.exp
    left = _eval(e.left, b)
    right = _eval(e.right, b)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if np.any(np.asarray(right) == 0):
        raise EvalError(f"division by zero in {to_string(e)!r}")
    return left / right


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, (Num, Const)):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    return free_vars(e.left) | free_vars(e.right)


# --- differentiation -------------------------------------------------------

ZERO = Num(0.0)
ONE = Num(1.0)


def _is_num(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Num) and (v is None or e.value == v)


def add(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return a
    return Pow(a, k)


def diff(e: Expr, var: str) -> Expr:
    """Exact derivative of ``e`` with respect to ``var``."""
    if isinstance(e, (Num, Const)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, BinOp):
        dl, dr = diff(e.left, var), diff(e.right, var)
        if e.op == "+":
            return add(dl, dr)
        if e.op == "-":
            return sub(dl, dr)
        if e.op == "*":
            return add(mul(dl, e.right), mul(e.left, dr))
        # (l/r)' = l'/r - l r'/r^2
        return sub(div(dl, e.right), div(mul(e.left, dr), power(e.right, 2)))
    if isinstance(e, Pow):
        db = diff(e.base, var)
        if _is_num(db, 0.0):
            return ZERO
        return mul(mul(Num(float(e.exp)), power(e.base, e.exp - 1)), db)
    da = diff(e.arg, var)
    if _is_num(da, 0.0):
        return ZERO
    if e.fn == "sin":
        outer: Expr = Call("cos", e.arg)
    elif e.fn == "cos":
        outer = neg(Call("sin", e.arg))
    elif e.fn == "exp":
        outer = e
    else:
        outer = div(Num(0.5), e)
    return mul(outer, da)


def var_names(n: int) -> tuple[list[str], list[str]]:
    return [f"x{j + 1}" for j in range(n)], [f"th{j + 1}" for j in range(n)]


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, (Num, Const)):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, Call):
        return Call(e.fn, substitute(e.arg, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exp)
    return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
