"""Expressions in the time variable ``t`` with symbolic differentiation.

Grammar, loosest binding first::

    sum     := product (('+' | '-') product)*
    product := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := number | 't' | 'pi' | 'e' | name '(' sum ')' | '(' sum ')'

so ``-2^2`` is -4 and ``2^-1`` is 0.5.
"""

from __future__ import annotations

import contextlib
import math
import re
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ExprSyntaxError, UnknownIdentifier
from .systems import Signal

MAX_LENGTH = 4096
# a maximal expression nests a few thousand levels; each costs several frames
_RECURSION_LIMIT = 10 * MAX_LENGTH

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp,
    "sinh": np.sinh, "cosh": np.cosh, "sqrt": np.sqrt,
}
# only produced by differentiation, never parsed
_INTERNAL = {"log": np.log}
CONSTANTS = {"pi": math.pi, "e": math.e}

_TOKEN = re.compile(r"(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S)")


# Tree nodes are tuples: ("num", v), ("t",), ("neg", a), (op, a, b), ("call", name, a)

@contextlib.contextmanager
def _deep_recursion():
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, _RECURSION_LIMIT))
    try:
        yield
    finally:
        sys.setrecursionlimit(old)


def _num(v):
    return ("num", float(v))


ZERO, ONE = _num(0.0), _num(1.0)


def _is_num(node, value=None):
    return node[0] == "num" and (value is None or node[1] == value)


def add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return _num(a[1] + b[1])
    return ("+", a, b)


def sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    if _is_num(a) and _is_num(b):
        return _num(a[1] - b[1])
    return ("-", a, b)


def mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return _num(a[1] * b[1])
    return ("*", a, b)


def div(a, b):
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return ("/", a, b)


def neg(a):
    if _is_num(a):
        return _num(-a[1])
    if a[0] == "neg":
        return a[1]
    return ("neg", a)


def power(a, b):
    if _is_num(b, 0.0):
        return ONE
    if _is_num(b, 1.0):
        return a
    return ("^", a, b)


def call(name, a):
    return ("call", name, a)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos == len(text):
                break
            m = _TOKEN.match(text, pos)
            start = m.start()
            kind = ("num", "name", "op")[m.lastindex - 1]
            value = m.group(m.lastindex)
            if kind == "op" and value not in "+-*/^()":
                raise ExprSyntaxError(f"unexpected character {value!r}", self._offset(start))
            self.tokens.append((kind, value, start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def _offset(self, char_index: int) -> int:
        return len(self.text[:char_index].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, v, pos = self.take()
        if v != value or kind != "op":
            found = "end of input" if kind == "end" else repr(v)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self._offset(pos))

    def parse(self):
        node = self.sum()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {v!r}", self._offset(pos))
        return node

    def sum(self):
        node = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.product())
        return node

    def product(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, v, pos = self.take()
        if kind == "num":
            return _num(v)
        if kind == "name":
            if v == "t":
                return ("t",)
            if v in CONSTANTS:
                return _num(CONSTANTS[v])
            if v in FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return ("call", v, arg)
            raise UnknownIdentifier(f"unknown identifier {v!r}", self._offset(pos))
        if (kind, v) == ("op", "("):
            node = self.sum()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(v)
        raise ExprSyntaxError(f"unexpected {found}", self._offset(pos))


def _depends_on_t(node) -> bool:
    if node[0] == "t":
        return True
    if node[0] == "num":
        return False
    return any(_depends_on_t(c) for c in node[1:] if isinstance(c, tuple))


def differentiate(node):
    """d/dt of a tree."""
    kind = node[0]
    if kind == "num":
        return ZERO
    if kind == "t":
        return ONE
    if kind == "neg":
        return neg(differentiate(node[1]))
    if kind in ("+", "-"):
        a, b = differentiate(node[1]), differentiate(node[2])
        return add(a, b) if kind == "+" else sub(a, b)
    if kind == "*":
        f, g = node[1], node[2]
        return add(mul(differentiate(f), g), mul(f, differentiate(g)))
    if kind == "/":
        f, g = node[1], node[2]
        return div(sub(mul(differentiate(f), g), mul(f, differentiate(g))), power(g, _num(2)))
    if kind == "^":
        f, g = node[1], node[2]
        df = differentiate(f)
        if not _depends_on_t(g):
            return mul(mul(g, power(f, sub(g, ONE))), df)
        dg = differentiate(g)
        return mul(node, add(mul(dg, call("log", f)), div(mul(g, df), f)))
    if kind == "call":
        name, a = node[1], node[2]
        da = differentiate(a)
        outer = {
            "sin": lambda: call("cos", a),
            "cos": lambda: neg(call("sin", a)),
            "tanh": lambda: sub(ONE, power(call("tanh", a), _num(2))),
            "exp": lambda: call("exp", a),
            "sinh": lambda: call("cosh", a),
            "cosh": lambda: call("sinh", a),
            "sqrt": lambda: div(ONE, mul(_num(2), call("sqrt", a))),
            "log": lambda: div(ONE, a),
        }[name]()
        return mul(outer, da)
    raise ValueError(f"bad node {node!r}")


def evaluate(node, t):
    kind = node[0]
    if kind == "num":
        return node[1] + 0.0 * t
    if kind == "t":
        return t + 0.0
    if kind == "neg":
        return -evaluate(node[1], t)
    if kind == "call":
        fn = FUNCTIONS.get(node[1]) or _INTERNAL[node[1]]
        return fn(evaluate(node[2], t))
    a, b = evaluate(node[1], t), evaluate(node[2], t)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if kind == "/":
        if np.any(np.asarray(b) == 0):
            raise ZeroDivisionError("division by zero in expression")
        return a / b
    return np.power(a, b)


def to_text(node) -> str:
    kind = node[0]
    if kind == "num":
        return repr(node[1])
    if kind == "t":
        return "t"
    if kind == "neg":
        return f"(-{to_text(node[1])})"
    if kind == "call":
        return f"{node[1]}({to_text(node[2])})"
    return f"({to_text(node[1])} {kind} {to_text(node[2])})"


@dataclass(frozen=True)
class Expression:
    """Parsed expression with its derivative tree."""

    text: str
    tree: tuple
    dtree: tuple

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        with _deep_recursion():
            out = evaluate(self.tree, t)
        return float(out) if out.ndim == 0 else out

    def derivative(self) -> "Expression":
        with _deep_recursion():
            return Expression(f"d/dt[{self.text}]", self.dtree, differentiate(self.dtree))

    def signal(self) -> Signal:
        d = self.derivative()
        return Signal(self, d, d.derivative())


def parse_expression(text: str) -> Expression:
    if len(text) > MAX_LENGTH:
        raise ExprSyntaxError(f"expression longer than {MAX_LENGTH} characters", MAX_LENGTH)
    with _deep_recursion():
        tree = _Parser(text).parse()
        return Expression(text, tree, differentiate(tree))
