"""A small arithmetic expression language for potentials and data functions.

Grammar: variables ``x1``, ``x2``, ``t``; binary operators ``+ - * / ^``
(with ``^`` right-associative and binding tighter than ``* /``, which bind
tighter than ``+ -``); unary minus; parentheses; numeric literals; the
constant ``pi``; functions ``sin cos exp sqrt abs`` (unary), ``min max``
(binary), ``smoothstep`` (ternary, GLSL-style clamped cubic).

Expressions are screened at load time by interval arithmetic over a declared
domain box so that evaluation is total on finite inputs: a division whose
denominator interval straddles zero, a square root of a possibly negative
interval, or a fractional power of a possibly negative base is rejected
before any grid loop runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "parse_expression",
    "unparse",
    "evaluate",
    "screen_intervals",
    "smoothstep",
]

VARIABLES = ("x1", "x2", "t")
UNARY_FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")
FUNCTION_ARITY = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
    "smoothstep": 3,
}


class ExpressionError(ValueError):
    """Parse or screening failure, carrying the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["Node", ...]


Node = Num | Var | Neg | BinOp | Call


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with its source text."""

    root: Node
    source: str

    def __call__(self, **env):
        return evaluate(self.root, env)

    def free_variables(self) -> frozenset[str]:
        found: set[str] = set()

        def walk(n: Node) -> None:
            if isinstance(n, Var):
                found.add(n.name)
            elif isinstance(n, Neg):
                walk(n.arg)
            elif isinstance(n, BinOp):
                walk(n.left)
                walk(n.right)
            elif isinstance(n, Call):
                for a in n.args:
                    walk(a)

        walk(self.root)
        return frozenset(found)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_OPS = set("+-*/^(),")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent; ^ right-associative above * / above + -)
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]], source: str):
        self.tokens = tokens
        self.pos = 0
        self.source = source

    @property
    def tok(self):
        return self.tokens[self.pos]

    def advance(self):
        self.pos += 1

    def expect_op(self, op: str):
        kind, val, off = self.tok
        if kind != "op" or val != op:
            if op == ")":
                raise ExpressionError("unbalanced parentheses", off)
            raise ExpressionError(f"expected {op!r}", off)
        self.advance()

    def parse(self) -> Node:
        node = self.sum()
        kind, val, off = self.tok
        if kind != "end":
            if kind == "op" and val == ")":
                raise ExpressionError("unbalanced parentheses", off)
            raise ExpressionError(f"unexpected token {val!r}", off)
        return node

    def sum(self) -> Node:
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.tok[1]
            self.advance()
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.tok[1]
            self.advance()
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok[0] == "op" and self.tok[1] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            # right associativity: exponent may itself start with unary minus
            return BinOp("^", base, self._power_rhs())
        return base

    def _power_rhs(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Neg(self._power_rhs())
        return self.power()

    def atom(self) -> Node:
        kind, val, off = self.tok
        if kind == "num":
            self.advance()
            return Num(float(val))
        if kind == "name":
            self.advance()
            if self.tok[0] == "op" and self.tok[1] == "(":
                return self.call(val, off)
            if val == "pi":
                return Num(math.pi)
            if val in VARIABLES:
                return Var(val)
            raise ExpressionError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            self.advance()
            node = self.sum()
            self.expect_op(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of expression", off)
        raise ExpressionError(f"unexpected token {val!r}", off)

    def call(self, name: str, off: int) -> Node:
        if name not in FUNCTION_ARITY:
            raise ExpressionError(f"unknown identifier {name!r}", off)
        self.expect_op("(")
        args = [self.sum()]
        while self.tok[0] == "op" and self.tok[1] == ",":
            self.advance()
            args.append(self.sum())
        self.expect_op(")")
        want = FUNCTION_ARITY[name]
        if len(args) != want:
            raise ExpressionError(
                f"{name} takes {want} argument{'s' if want != 1 else ''}, "
                f"got {len(args)}",
                off,
            )
        return Call(name, tuple(args))


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an :class:`Expression`; raises
    :class:`ExpressionError` with a character offset on failure."""
    if not text or not text.strip():
        raise ExpressionError("empty expression", 0)
    tokens = _tokenize(text)
    root = _Parser(tokens, text).parse()
    return Expression(root=root, source=text)


# ---------------------------------------------------------------------------
# Unparser: emits a fully parenthesized canonical form that reparses to an
# identical AST.
# ---------------------------------------------------------------------------


def unparse(node: Node | Expression) -> str:
    if isinstance(node, Expression):
        node = node.root
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{unparse(node.arg)})"
    if isinstance(node, BinOp):
        return f"({unparse(node.left)} {node.op} {unparse(node.right)})"
    if isinstance(node, Call):
        args = ", ".join(unparse(a) for a in node.args)
        return f"{node.fn}({args})"
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation (numpy-aware) and GLSL-style smoothstep
# ---------------------------------------------------------------------------


def smoothstep(edge0, edge1, x):
    """Clamped cubic ramp: 0 for x <= edge0, 1 for x >= edge1, and
    3 s^2 - 2 s^3 with s = (x - edge0)/(edge1 - edge0) in between."""
    s = np.clip((np.asarray(x) - edge0) / (edge1 - edge0), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def evaluate(node: Node, env: Mapping[str, np.ndarray | float]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise KeyError(f"no value bound for variable {node.name!r}")
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.arg, env)
    if isinstance(node, BinOp):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        if node.op == "^":
            return np.power(a, b) if isinstance(a, np.ndarray) or isinstance(b, np.ndarray) else a**b
        raise ValueError(f"unknown operator {node.op!r}")
    if isinstance(node, Call):
        args = [evaluate(a, env) for a in node.args]
        if node.fn == "sin":
            return np.sin(args[0])
        if node.fn == "cos":
            return np.cos(args[0])
        if node.fn == "exp":
            return np.exp(args[0])
        if node.fn == "sqrt":
            return np.sqrt(args[0])
        if node.fn == "abs":
            return np.abs(args[0])
        if node.fn == "min":
            return np.minimum(args[0], args[1])
        if node.fn == "max":
            return np.maximum(args[0], args[1])
        if node.fn == "smoothstep":
            return smoothstep(args[0], args[1], args[2])
        raise ValueError(f"unknown function {node.fn!r}")
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Interval screening
# ---------------------------------------------------------------------------

Interval = tuple[float, float]


def _iv_add(a: Interval, b: Interval) -> Interval:
    return (a[0] + b[0], a[1] + b[1])


def _iv_sub(a: Interval, b: Interval) -> Interval:
    return (a[0] - b[1], a[1] - b[0])


def _iv_mul(a: Interval, b: Interval) -> Interval:
    prods = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return (min(prods), max(prods))


def _iv_pow(a: Interval, k: float, offset: int) -> Interval:
    if k != round(k):
        if a[0] < 0.0:
            raise ExpressionError(
                "fractional power of a possibly negative base", offset
            )
        return (a[0] ** k, a[1] ** k)
    k = int(round(k))
    if k < 0:
        if a[0] <= 0.0 <= a[1]:
            raise ExpressionError("negative power of an interval containing zero", offset)
        vals = (a[0] ** k, a[1] ** k)
        return (min(vals), max(vals))
    if k == 0:
        return (1.0, 1.0)
    if k % 2 == 0:
        lo = 0.0 if a[0] <= 0.0 <= a[1] else min(a[0] ** k, a[1] ** k)
        return (lo, max(a[0] ** k, a[1] ** k))
    return (a[0] ** k, a[1] ** k)


def _iv(node: Node, box: Mapping[str, Interval]) -> Interval:
    if isinstance(node, Num):
        return (node.value, node.value)
    if isinstance(node, Var):
        if node.name not in box:
            raise ExpressionError(f"variable {node.name} outside declared domain box", 0)
        return box[node.name]
    if isinstance(node, Neg):
        a = _iv(node.arg, box)
        return (-a[1], -a[0])
    if isinstance(node, BinOp):
        a = _iv(node.left, box)
        b = _iv(node.right, box)
        if node.op == "+":
            return _iv_add(a, b)
        if node.op == "-":
            return _iv_sub(a, b)
        if node.op == "*":
            return _iv_mul(a, b)
        if node.op == "/":
            if b[0] <= 0.0 <= b[1]:
                raise ExpressionError("division by an interval containing zero", 0)
            return _iv_mul(a, (1.0 / b[1], 1.0 / b[0]))
        if node.op == "^":
            if not isinstance(node.right, Num):
                raise ExpressionError("exponent must be a numeric literal", 0)
            return _iv_pow(a, node.right.value, 0)
    if isinstance(node, Call):
        ivs = [_iv(a, box) for a in node.args]
        if node.fn in ("sin", "cos"):
            return (-1.0, 1.0)
        if node.fn == "exp":
            return (math.exp(ivs[0][0]), math.exp(ivs[0][1]))
        if node.fn == "sqrt":
            if ivs[0][0] < 0.0:
                raise ExpressionError("square root of a possibly negative interval", 0)
            return (math.sqrt(ivs[0][0]), math.sqrt(ivs[0][1]))
        if node.fn == "abs":
            lo, hi = ivs[0]
            if lo <= 0.0 <= hi:
                return (0.0, max(-lo, hi))
            return (min(abs(lo), abs(hi)), max(abs(lo), abs(hi)))
        if node.fn == "min":
            return (min(ivs[0][0], ivs[1][0]), min(ivs[0][1], ivs[1][1]))
        if node.fn == "max":
            return (max(ivs[0][0], ivs[1][0]), max(ivs[0][1], ivs[1][1]))
        if node.fn == "smoothstep":
            gap = _iv_sub(ivs[1], ivs[0])
            if gap[0] <= 0.0 <= gap[1]:
                raise ExpressionError(
                    "smoothstep edges may coincide on the domain box", 0
                )
            return (0.0, 1.0)
    raise TypeError(f"not an AST node: {node!r}")


def screen_intervals(expr: Expression, box: Mapping[str, Interval]) -> Interval:
    """Evaluate ``expr`` in interval arithmetic over the domain ``box``,
    rejecting partial operations whose argument intervals admit undefined
    values.  Returns the enclosing output interval."""
    return _iv(expr.root, box)
