"""Closed-form field expressions: a small recursive-descent parser and evaluator.

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?          # right associative
    atom   := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

so ``-x^2`` is ``-(x^2)`` and ``2^-1`` is ``0.5``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .grid import ChartGrid, ScalarField

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "cosh": np.cosh,
    "sinh": np.sinh,
}
CONSTANTS = {"pi": np.pi, "e": np.e}
VARIABLES = ("x", "y", "z", "r", "theta", "phi")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, source: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.source = source


class ExprNameError(ExprSyntaxError):
    pass


class ExprDomainError(ArithmeticError):
    def __init__(self, message: str, node):
        super().__init__(f"{message} at node {node}")
        self.node = node


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad, src)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
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

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.peek()
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", pos, self.src)
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos, self.src)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in CONSTANTS or text in VARIABLES:
                return Var(text)
            raise ExprNameError(f"unknown identifier {text!r}", pos, self.src)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", pos, self.src)


def parse(src: str) -> Node:
    """Parse an expression string into an AST."""
    return _Parser(src).parse()


def to_string(node: Node) -> str:
    """Canonical, fully parenthesized rendering; ``parse(to_string(a)) == a``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_string(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_string(node.arg)})"
    return f"({to_string(node.left)} {node.op} {to_string(node.right)})"


def variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return set() if node.name in CONSTANTS else {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.operand if isinstance(node, Neg) else node.arg)
    return variables(node.left) | variables(node.right)


def _first_bad(mask: np.ndarray):
    idx = np.argwhere(mask)[0]
    return tuple(int(i) for i in idx)


def _eval(node: Node, env: dict[str, np.ndarray]) -> np.ndarray:
    if isinstance(node, Num):
        return np.asarray(node.value)
    if isinstance(node, Var):
        if node.name in CONSTANTS:
            return np.asarray(CONSTANTS[node.name])
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        shaped = np.broadcast_to(arg, env["__shape__"])
        if node.func == "log" and np.any(shaped <= 0):
            raise ExprDomainError("log of non-positive value", _first_bad(shaped <= 0))
        if node.func == "sqrt" and np.any(shaped < 0):
            raise ExprDomainError("sqrt of negative value", _first_bad(shaped < 0))
        with np.errstate(all="ignore"):
            out = FUNCTIONS[node.func](arg)
        bad = ~np.isfinite(np.broadcast_to(out, env["__shape__"]))
        if np.any(bad):
            raise ExprDomainError(f"{node.func} overflow", _first_bad(bad))
        return out
    left = _eval(node.left, env)
    right = _eval(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        den = np.broadcast_to(right, env["__shape__"])
        if np.any(den == 0):
            raise ExprDomainError("division by zero", _first_bad(den == 0))
        return left / right
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        out = np.power(left, right)
    bad = ~np.isfinite(np.broadcast_to(out, env["__shape__"]))
    if np.any(bad):
        raise ExprDomainError("invalid power", _first_bad(bad))
    return out


def evaluate(ast, grid: ChartGrid) -> ScalarField:
    """Evaluate an AST (or source string) at every node of ``grid``."""
    if isinstance(ast, str):
        ast = parse(ast)
    allowed = set(grid.coordinate_names)
    unknown = variables(ast) - allowed
    if unknown:
        raise ExprNameError(
            f"variables {sorted(unknown)} are not coordinates of a {grid.kind.value} chart", 0
        )
    env = dict(grid.coordinates())
    env["__shape__"] = grid.shape
    values = np.broadcast_to(_eval(ast, env), grid.shape)
    if not np.all(np.isfinite(values)):
        raise ExprDomainError("non-finite value", _first_bad(~np.isfinite(values)))
    return ScalarField(grid, values)


def evaluate_constant(src) -> float:
    """Evaluate a coordinate-free expression such as ``"2/3"``."""
    if isinstance(src, (int, float)):
        return float(src)
    ast = parse(str(src))
    if variables(ast):
        raise ExprNameError(f"expected a constant, found variables {sorted(variables(ast))}", 0)
    env = {"__shape__": ()}
    return float(_eval(ast, env))
