"""A small infix expression language for dynamics and running costs.

Expressions range over the time ``t``, states ``x1..xn`` and controls ``u1..um``.
Grammar (``^`` binds tightest and associates to the right, unary minus binds
looser than ``^`` so ``-x1^2`` is ``-(x1^2)``)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | VAR | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

Evaluation is vectorised over numpy arrays: ``x`` carries the state on its last
axis and ``u`` the control on its last axis; everything broadcasts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ExprDomainError, ExprSyntaxError

FUNCTIONS = {"exp": 1, "sin": 1, "cos": 1, "abs": 1, "sqrt": 1, "min": -2, "max": -2}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"([xu])([0-9]+)")


class Expr:
    """Base class of the AST nodes."""

    def evaluate(self, t, x=None, u=None):
        """Evaluate at ``t`` (scalar or array), state ``x`` (..., n), control ``u`` (..., m).

        Returns a float for scalar inputs, otherwise an array of the broadcast shape.
        """
        t = np.asarray(t, dtype=float)
        x = np.zeros((1,)) if x is None else np.asarray(x, dtype=float)
        u = np.zeros((1,)) if u is None else np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1], u.shape[:-1])
        with np.errstate(all="ignore"):
            out = self._fn(t, x, u)
        out = np.asarray(out, dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape)
        if not np.isfinite(out).all():
            bad = ~np.isfinite(out)
            raise ExprDomainError(f"non-finite result in {self}", int(np.flatnonzero(bad)[0]))
        if shape == ():
            return float(out)
        return np.array(out)

    @cached_property
    def _fn(self):
        return self._compile()

    def variables(self):
        return set(self._walk_vars())

    def _walk_vars(self):
        return iter(())

    def __str__(self):
        return pretty(self)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float

    def _compile(self):
        v = self.value
        return lambda t, x, u: v


@dataclass(frozen=True, eq=True)
class Var(Expr):
    kind: str  # "t", "x" or "u"
    index: int = 0  # 1-based for x and u

    def _compile(self):
        if self.kind == "t":
            return lambda t, x, u: t
        i = self.index - 1
        if self.kind == "x":
            return lambda t, x, u: x[..., i]
        return lambda t, x, u: u[..., i]

    def _walk_vars(self):
        yield (self.kind, self.index)


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    operand: Expr

    def _compile(self):
        a = self.operand._fn
        return lambda t, x, u: -a(t, x, u)

    def _walk_vars(self):
        return self.operand._walk_vars()


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def _compile(self):
        a, b = self.left._fn, self.right._fn
        if self.op == "+":
            return lambda t, x, u: a(t, x, u) + b(t, x, u)
        if self.op == "-":
            return lambda t, x, u: a(t, x, u) - b(t, x, u)
        if self.op == "*":
            return lambda t, x, u: a(t, x, u) * b(t, x, u)
        if self.op == "/":
            return lambda t, x, u: _div(a(t, x, u), b(t, x, u))
        if isinstance(self.right, Num) and self.right.value == int(self.right.value) and self.right.value >= 0:
            k = int(self.right.value)
            return lambda t, x, u: np.power(a(t, x, u), k)
        return lambda t, x, u: _pow(a(t, x, u), b(t, x, u))

    def _walk_vars(self):
        yield from self.left._walk_vars()
        yield from self.right._walk_vars()


@dataclass(frozen=True, eq=True)
class Call(Expr):
    name: str
    args: tuple

    def _compile(self):
        fs = [a._fn for a in self.args]
        name = self.name
        if name == "min":
            return lambda t, x, u: _reduce(np.minimum, [f(t, x, u) for f in fs])
        if name == "max":
            return lambda t, x, u: _reduce(np.maximum, [f(t, x, u) for f in fs])
        f = fs[0]
        if name == "sqrt":
            return lambda t, x, u: _sqrt(f(t, x, u))
        ufunc = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "abs": np.abs}[name]
        return lambda t, x, u: ufunc(f(t, x, u))

    def _walk_vars(self):
        for a in self.args:
            yield from a._walk_vars()


def _first(mask):
    return int(np.flatnonzero(np.asarray(mask))[0])


def _div(a, b):
    b = np.asarray(b)
    zero = b == 0
    if zero.any():
        raise ExprDomainError("division by zero", _first(np.broadcast_to(zero, np.broadcast_shapes(np.shape(a), b.shape))))
    return a / b


def _sqrt(a):
    a = np.asarray(a)
    neg = a < 0
    if neg.any():
        raise ExprDomainError("sqrt of a negative number", _first(neg))
    return np.sqrt(a)


def _pow(a, b):
    a, b = np.asarray(a), np.asarray(b)
    shape = np.broadcast_shapes(a.shape, b.shape)
    frac = (a < 0) & (b != np.round(b))
    if frac.any():
        raise ExprDomainError("negative base with non-integer exponent", _first(np.broadcast_to(frac, shape)))
    pole = (a == 0) & (b < 0)
    if pole.any():
        raise ExprDomainError("division by zero (zero to a negative power)", _first(np.broadcast_to(pole, shape)))
    return np.power(a, b)


def _reduce(op, vals):
    out = vals[0]
    for v in vals[1:]:
        out = op(out, v)
    return out


# --------------------------------------------------------------------- parser


class _Parser:
    def __init__(self, source, n, m):
        self.source = source
        self.n, self.m = n, m
        self.tokens = self._tokenize(source)
        self.pos = 0

    def _offset(self, char_index):
        return len(self.source[:char_index].encode("utf-8"))

    def _tokenize(self, src):
        tokens = []
        i = 0
        while i < len(src):
            if src[i].isspace():
                i += 1
                continue
            mt = _TOKEN.match(src, i)
            if mt is None or mt.end() == i:
                raise ExprSyntaxError(f"unexpected character {src[i]!r}", self._offset(i))
            kind = mt.lastgroup
            start = mt.start(kind)
            tokens.append((kind, mt.group(kind), start))
            i = mt.end()
        tokens.append(("end", "", len(src)))
        return tokens

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text):
        kind, val, at = self.take()
        if val != text or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self._offset(at))

    def parse(self):
        node = self.expr()
        kind, val, at = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", self._offset(at))
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
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, at = self.take()
        if kind == "num":
            value = float(val)
            if not np.isfinite(value):
                raise ExprSyntaxError(f"numeric literal {val!r} is not finite", self._offset(at))
            return Num(value)
        if kind == "ident":
            return self.identifier(val, at)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"expected an operand, found {found}", self._offset(at))

    def identifier(self, name, at):
        if name in FUNCTIONS:
            if self.peek()[1] != "(":
                raise ExprSyntaxError(f"function {name!r} must be called", self._offset(at))
            self.take()
            args = [self.expr()]
            while self.peek()[1] == "," and self.peek()[0] == "op":
                self.take()
                args.append(self.expr())
            self.expect(")")
            arity = FUNCTIONS[name]
            if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
                raise ExprSyntaxError(f"wrong number of arguments to {name!r}", self._offset(at))
            return Call(name, tuple(args))
        if name == "t":
            return Var("t", 0)
        mv = _VAR.fullmatch(name)
        if mv is None:
            err = ExprSyntaxError(f"unknown identifier {name!r}", self._offset(at))
            err.kind = "unknown-identifier"
            raise err
        kind, idx = mv.group(1), int(mv.group(2))
        limit = self.n if kind == "x" else self.m
        if not 1 <= idx <= limit:
            err = ExprSyntaxError(f"variable {name!r} out of range (dimension {limit})", self._offset(at))
            err.kind = "index-range"
            raise err
        return Var(kind, idx)


def parse_expr(source, n, m):
    """Parse ``source`` into an :class:`Expr` over ``t``, ``x1..xn``, ``u1..um``."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source, n, m).parse()


def pretty(node):
    """Fully parenthesised rendering; ``parse_expr(pretty(e))`` reproduces ``e``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "t" if node.kind == "t" else f"{node.kind}{node.index}"
    if isinstance(node, Neg):
        return f"(-{pretty(node.operand)})"
    if isinstance(node, BinOp):
        return f"({pretty(node.left)} {node.op} {pretty(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(pretty(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")
