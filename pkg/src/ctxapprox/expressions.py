"""Tiny arithmetic expression grammar for target functions.

Supports literals, pi, input components (x or x1..x99), + - * /, unary minus,
parentheses, and the functions sin, cos, exp, relu.  Expressions compile to
vectorized callables on (N, d) point arrays; ``x`` is an alias for ``x1``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError

_TOKEN_RE = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                       r"|([A-Za-z_][A-Za-z_0-9]*)|(.))")

_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "relu": lambda z: np.maximum(z, 0.0),
}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            break
        num, ident, sym = m.groups()
        if num is not None:
            tokens.append(("num", num))
        elif ident is not None:
            tokens.append(("ident", ident))
        elif sym.strip():
            if sym not in "+-*/(),":
                raise ConfigError("target.expr", f"unexpected character {sym!r}")
            tokens.append(("sym", sym))
        pos = m.end()
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, sym: str):
        kind, val = self.next()
        if kind != "sym" or val != sym:
            raise ConfigError("target.expr", f"expected {sym!r} near token {val!r}")

    def parse(self):
        node = self.expr()
        kind, val = self.peek()
        if kind != "end":
            raise ConfigError("target.expr", f"trailing input at {val!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("sym", "+") or self.peek() == ("sym", "-"):
            op = self.next()[1]
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("sym", "*") or self.peek() == ("sym", "/"):
            op = self.next()[1]
            rhs = self.unary()
            node = ("mul" if op == "*" else "div", node, rhs)
        return node

    def unary(self):
        if self.peek() == ("sym", "-"):
            self.next()
            return ("neg", self.unary())
        return self.atom()

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            return ("const", float(val))
        if kind == "ident":
            if val == "pi":
                return ("const", math.pi)
            if val in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", val, arg)
            m = re.fullmatch(r"x(\d*)", val)
            if m:
                idx = int(m.group(1)) - 1 if m.group(1) else 0
                if idx < 0:
                    raise ConfigError("target.expr", f"bad variable {val!r}")
                return ("var", idx)
            raise ConfigError("target.expr", f"unknown identifier {val!r}")
        if kind == "sym" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ConfigError("target.expr", f"unexpected token {val!r}")


def _eval(node, pts: np.ndarray):
    op = node[0]
    if op == "const":
        return np.full(pts.shape[0], node[1])
    if op == "var":
        if node[1] >= pts.shape[1]:
            raise ConfigError("target.expr",
                              f"variable x{node[1] + 1} exceeds input dimension {pts.shape[1]}")
        return pts[:, node[1]]
    if op == "neg":
        return -_eval(node[1], pts)
    if op == "call":
        return _FUNCTIONS[node[1]](_eval(node[2], pts))
    a, b = _eval(node[1], pts), _eval(node[2], pts)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    return a / b


@dataclass(frozen=True)
class TargetExpr:
    """Compiled expression; callable on (N, d) arrays, returns (N,)."""

    text: str
    node: tuple

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return _eval(self.node, pts)


def parse_target(text: str) -> TargetExpr:
    return TargetExpr(text, _Parser(text).parse())
