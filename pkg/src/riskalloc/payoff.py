"""Terminal payoff expressions: a small parsed language over the terminal state.

Grammar (highest binding first):

    unary minus  >  ^ (right associative)  >  * /  >  + -

``W`` is the terminal Brownian value (d = 1); ``W1`` .. ``Wd`` index the
coordinates for d >= 1.  Functions: ``exp``, ``ln``, ``abs`` (one argument),
``max``, ``min``, ``pow`` (two arguments).  Only terminal-state payoffs are
expressible; there is no path dependence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import PayoffEvaluationError, PayoffSyntaxError

__all__ = ["PayoffExpr", "Literal", "Terminal", "Unary", "Binary",
           "parse_payoff", "evaluate", "to_string"]


@dataclass(frozen=True)
class Literal:
    value: float


@dataclass(frozen=True)
class Terminal:
    """Reference to terminal coordinate ``index`` (0-based)."""
    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # neg, exp, ln, abs
    operand: "PayoffExpr"


@dataclass(frozen=True)
class Binary:
    op: str  # add, sub, mul, div, max, min, pow
    lhs: "PayoffExpr"
    rhs: "PayoffExpr"


PayoffExpr = Literal | Terminal | Unary | Binary

_TOKEN = re.compile(r"""
    (?P<num>\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
  | (?P<ws>\s+)
""", re.VERBOSE)

_FUNCTIONS = {"exp": 1, "ln": 1, "abs": 1, "max": 2, "min": 2, "pow": 2}


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PayoffSyntaxError(f"unexpected character {text[pos]!r} at position {pos}",
                                    position=pos)
        if m.lastgroup != "ws" or m.group("ws") is None:
            if m.group("num") is not None:
                out.append(("num", m.group(0), pos))
            elif m.group("ident") is not None:
                out.append(("ident", m.group(0), pos))
            elif m.group("op") is not None:
                out.append(("op", "^" if m.group(0) == "**" else m.group(0), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text, dimension):
        self.text = text
        self.d = dimension
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise PayoffSyntaxError(f"expected {value!r} at position {pos}, got {val or 'end'!r}",
                                    position=pos)

    def parse(self):
        expr = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise PayoffSyntaxError(f"trailing input {val!r} at position {pos}", position=pos)
        return expr

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = Binary("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.power()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = Binary("mul" if op == "*" else "div", node, self.power())
        return node

    def power(self):
        node = self.factor()
        if self.peek()[1] == "^":
            self.take()
            node = Binary("pow", node, self.power())
        return node

    def factor(self):
        kind, val, pos = self.peek()
        if val == "-":
            self.take()
            return Unary("neg", self.factor())
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Literal(float(val))
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(val, pos)
            return self.variable(val, pos)
        raise PayoffSyntaxError(f"expected a value at position {pos}, got {val or 'end'!r}",
                                position=pos)

    def call(self, name, pos):
        if name not in _FUNCTIONS:
            raise PayoffSyntaxError(f"unknown function {name!r} at position {pos}", position=pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = _FUNCTIONS[name]
        if len(args) != arity:
            raise PayoffSyntaxError(
                f"{name} takes {arity} argument(s), got {len(args)} at position {pos}",
                position=pos)
        if arity == 1:
            return Unary(name, args[0])
        return Binary(name, args[0], args[1])

    def variable(self, name, pos):
        if name == "W":
            if self.d != 1:
                raise PayoffSyntaxError(
                    f"bare W is only valid for dimension 1; use W1..W{self.d}", position=pos)
            return Terminal(0)
        m = re.fullmatch(r"W(\d+)", name)
        if m:
            idx = int(m.group(1))
            if not 1 <= idx <= self.d:
                raise PayoffSyntaxError(
                    f"unknown identifier {name!r} (dimension is {self.d}) at position {pos}",
                    position=pos)
            return Terminal(idx - 1)
        raise PayoffSyntaxError(f"unknown identifier {name!r} at position {pos}", position=pos)


def parse_payoff(text: str, dimension: int = 1) -> PayoffExpr:
    """Parse ``text`` into an expression tree over W (or W1..Wd)."""
    return _Parser(text, dimension).parse()


def _coord(state, index):
    w = np.asarray(state, dtype=float)
    if w.ndim == 0:
        w = w[None]
        return w[..., 0] if index == 0 else _bad_index(index, state)
    if w.ndim == 1:
        # Either a batch of d=1 states or a single point in R^d; a batch is
        # the only shape the solvers produce, so index 0 means the batch.
        if index == 0:
            return w
        return _bad_index(index, state)
    return w[..., index]


def _bad_index(index, state):
    raise PayoffEvaluationError(
        f"coordinate W{index + 1} requested but state has dimension 1", state=state)


def evaluate(expr: PayoffExpr, state) -> np.ndarray:
    """Evaluate ``expr`` at terminal state(s).

    ``state`` is an array of d=1 states (shape (n,)) or of d-dimensional
    states (shape (n, d)).  Division by zero and logarithms of non-positive
    values raise PayoffEvaluationError naming an offending state.
    """
    match expr:
        case Literal(value=v):
            base = np.asarray(state, dtype=float)
            shape = base.shape if base.ndim <= 1 else base.shape[:-1]
            return np.full(shape, v)
        case Terminal(index=i):
            return np.asarray(_coord(state, i), dtype=float)
        case Unary(op=op, operand=inner):
            x = evaluate(inner, state)
            if op == "neg":
                return -x
            if op == "exp":
                return np.exp(x)
            if op == "abs":
                return np.abs(x)
            if op == "ln":
                bad = ~(x > 0)
                if np.any(bad):
                    raise PayoffEvaluationError(
                        f"ln of non-positive value {np.asarray(x)[bad].flat[0]!r}",
                        state=_witness(state, bad))
                return np.log(x)
        case Binary(op=op, lhs=lhs, rhs=rhs):
            a, b = evaluate(lhs, state), evaluate(rhs, state)
            if op == "add":
                return a + b
            if op == "sub":
                return a - b
            if op == "mul":
                return a * b
            if op == "div":
                bad = b == 0
                if np.any(bad):
                    raise PayoffEvaluationError("division by zero",
                                                state=_witness(state, bad))
                return a / b
            if op == "max":
                return np.maximum(a, b)
            if op == "min":
                return np.minimum(a, b)
            if op == "pow":
                with np.errstate(invalid="raise", divide="raise"):
                    try:
                        return np.asarray(np.power(a, b), dtype=float)
                    except FloatingPointError as exc:
                        raise PayoffEvaluationError(f"invalid power: {exc}",
                                                    state=state) from exc
    raise PayoffSyntaxError(f"malformed expression node {expr!r}")


def _witness(state, bad_mask):
    arr = np.asarray(state)
    flat_idx = int(np.flatnonzero(np.broadcast_to(bad_mask, arr.shape[:bad_mask.ndim]))[0]) \
        if bad_mask.ndim else 0
    if arr.ndim <= 1:
        return float(arr.reshape(-1)[flat_idx]) if arr.size else None
    return arr.reshape(-1, arr.shape[-1])[flat_idx].tolist()


_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 3}
_OP_TEXT = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def to_string(expr: PayoffExpr, dimension: int = 1) -> str:
    """Deterministic textual form; reparsing yields a structurally equal tree."""
    return _print(expr, 0, dimension)


def _print(expr, parent_prec, d):
    match expr:
        case Literal(value=v):
            return repr(v)
        case Terminal(index=i):
            return "W" if (i == 0 and d == 1) else f"W{i + 1}"
        case Unary(op="neg", operand=inner):
            text = f"-{_print(inner, 4, d)}"
            return f"({text})" if parent_prec >= 4 else text
        case Unary(op=op, operand=inner):
            return f"{op}({_print(inner, 0, d)})"
        case Binary(op="max" | "min" as op, lhs=a, rhs=b):
            return f"{op}({_print(a, 0, d)}, {_print(b, 0, d)})"
        case Binary(op=op, lhs=a, rhs=b):
            prec = _PRECEDENCE[op]
            # + - * / are left associative (the right operand needs a bump
            # to survive the round trip), ^ is right associative.
            left = _print(a, prec if op != "pow" else prec + 1, d)
            right = _print(b, prec if op == "pow" else prec + 1, d)
            text = f"{left} {_OP_TEXT[op]} {right}"
            return f"({text})" if parent_prec > prec else text
    raise PayoffSyntaxError(f"malformed expression node {expr!r}")
