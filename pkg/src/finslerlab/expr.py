"""Scalar expressions of coordinates.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?          # right-associative
    primary := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

``VAR`` is ``x1..xn``; trees that live on the tangent bundle also accept
``y1..yn`` (stored as positions n+1..2n).  ``FUNC`` is one of sin, cos, exp,
log, sqrt, tanh.  Evaluation is generic over the scalar type of the point:
plain floats, numpy arrays (vectorized over sample batches) or
:class:`~finslerlab.taylor.Taylor` jets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ArityError, DomainError, ExpressionSyntaxError, UnknownIdentifier
from .taylor import Taylor, jet_space, seed, stack

__all__ = [
    "SyntaxTree", "parse", "evaluate", "evaluate_array",
    "ScalarField", "VectorField", "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
MAX_DEPTH = 200

_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_VAR = re.compile(r"([xy])([1-9][0-9]*)")


# --- tree ------------------------------------------------------------------
@dataclass(frozen=True)
class Node:
    start: int
    end: int


@dataclass(frozen=True)
class Const(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    index: int  # zero-based position in the point


@dataclass(frozen=True)
class Neg(Node):
    child: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node


def _is_constant(node: Node) -> bool:
    if isinstance(node, Const):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, Neg):
        return _is_constant(node.child)
    if isinstance(node, Call):
        return _is_constant(node.arg)
    return _is_constant(node.left) and _is_constant(node.right)


@dataclass(frozen=True)
class SyntaxTree:
    """Immutable parsed expression.

    ``nvars`` is the length of the point the tree is evaluated at: the
    manifold dimension, or twice that for trees on the tangent bundle.
    """

    source: str
    root: Node
    dimension: int
    tangent: bool = False

    @property
    def nvars(self) -> int:
        return 2 * self.dimension if self.tangent else self.dimension

    def text(self, node: Node) -> str:
        raw = self.source.encode("utf-8")
        return raw[node.start:node.end].decode("utf-8", errors="replace")

    def __str__(self) -> str:
        return self.source


# --- tokenizer -------------------------------------------------------------
@dataclass(frozen=True)
class _Tok:
    kind: str  # num, ident, op, end
    text: str
    start: int  # byte offsets
    end: int


def _tokenize(source: str) -> list[_Tok]:
    # byte offset of every character index (plus the end)
    offsets = [0]
    for ch in source:
        offsets.append(offsets[-1] + len(ch.encode("utf-8")))
    toks = []
    i = 0
    while i < len(source):
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        m = _NUMBER.match(source, i)
        if m and m.end() > i:
            toks.append(_Tok("num", m.group(0), offsets[i], offsets[m.end()]))
            i = m.end()
            continue
        m = _IDENT.match(source, i)
        if m:
            toks.append(_Tok("ident", m.group(0), offsets[i], offsets[m.end()]))
            i = m.end()
            continue
        if ch in "+-*/^(),":
            toks.append(_Tok("op", ch, offsets[i], offsets[i + 1]))
            i += 1
            continue
        raise ExpressionSyntaxError(f"unexpected character {ch!r}", source, offsets[i])
    toks.append(_Tok("end", "", offsets[-1], offsets[-1]))
    return toks


# --- parser ----------------------------------------------------------------
class _Parser:
    def __init__(self, source: str, dimension: int, tangent: bool):
        self.source = source
        self.dimension = dimension
        self.tangent = tangent
        self.toks = _tokenize(source)
        self.pos = 0
        self.depth = 0

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def take(self) -> _Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def error(self, tok: _Tok, message: str):
        if tok.kind == "end":
            message = f"unexpected end of input ({message})"
        raise ExpressionSyntaxError(message, self.source, tok.start, tok.end)

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            self.error(tok, f"expected '{text}'")
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            self.error(tok, f"unexpected '{tok.text}'")
        return node

    def _enter(self, tok: _Tok):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ExpressionSyntaxError("expression nested too deeply", self.source, tok.start)

    def expr(self) -> Node:
        self._enter(self.peek())
        left = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            right = self.term()
            left = BinOp(left.start, right.end, op, left, right)
        self.depth -= 1
        return left

    def term(self) -> Node:
        left = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            right = self.unary()
            left = BinOp(left.start, right.end, op, left, right)
        return left

    def unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self._enter(tok)
            self.take()
            child = self.unary()
            self.depth -= 1
            return child if tok.text == "+" else Neg(tok.start, child.end, child)
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            tok = self.take()
            self._enter(tok)
            exponent = self.unary()
            self.depth -= 1
            return BinOp(base.start, exponent.end, "^", base, exponent)
        return base

    def primary(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            return Const(tok.start, tok.end, float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            inner = self.expr()
            close = self.expect(")")
            return _reframe(inner, tok.start, close.end)
        if tok.kind == "ident":
            if tok.text in FUNCTIONS:
                return self.call(tok)
            m = _VAR.fullmatch(tok.text)
            if m:
                k = int(m.group(2))
                tangent_var = m.group(1) == "y"
                if k <= self.dimension and (not tangent_var or self.tangent):
                    index = k - 1 + (self.dimension if tangent_var else 0)
                    node = Var(tok.start, tok.end, index)
                    nxt = self.peek()
                    if nxt.kind == "op" and nxt.text == "(":
                        self.error(nxt, f"'{tok.text}' is not a function")
                    return node
            raise UnknownIdentifier(f"unknown identifier '{tok.text}'", self.source, tok.start, tok.end)
        self.error(tok, f"unexpected '{tok.text}'" if tok.text else "expected an operand")

    def call(self, name: _Tok) -> Node:
        nxt = self.peek()
        if nxt.kind != "op" or nxt.text != "(":
            raise ArityError(f"function '{name.text}' takes exactly one argument",
                             self.source, name.start, name.end)
        self.take()
        close = self.peek()
        if close.kind == "op" and close.text == ")":
            raise ArityError(f"function '{name.text}' takes exactly one argument, got 0",
                             self.source, name.start, close.end)
        args = [self.expr()]
        while self.peek().kind == "op" and self.peek().text == ",":
            self.take()
            args.append(self.expr())
        close = self.expect(")")
        if len(args) != 1:
            raise ArityError(f"function '{name.text}' takes exactly one argument, got {len(args)}",
                             self.source, name.start, close.end)
        return Call(name.start, close.end, name.text, args[0])


def _reframe(node: Node, start: int, end: int) -> Node:
    # widen the span of a parenthesized subexpression so diagnostics quote it whole
    fields = dict(node.__dict__)
    fields.update(start=start, end=end)
    return type(node)(**fields)


def parse(source: str, dimension: int, *, tangent: bool = False) -> SyntaxTree:
    """Parse ``source`` into a :class:`SyntaxTree` over ``x1..x<dimension>``.

    With ``tangent=True`` the identifiers ``y1..y<dimension>`` are also
    accepted.  Raises :class:`UnknownIdentifier`, :class:`ArityError` or
    :class:`ExpressionSyntaxError`, each carrying a byte offset.
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if not isinstance(source, str):
        raise ExpressionSyntaxError("expression must be a string", str(source), 0)
    root = _Parser(source, dimension, tangent).parse()
    return SyntaxTree(source, root, dimension, tangent)


# --- evaluation ------------------------------------------------------------
Scalar = Union[float, np.ndarray, Taylor]


def _domain_check(bad, tree: SyntaxTree, node: Node, message: str):
    if np.any(bad):
        raise DomainError(message, tree.text(node))


def _apply(func: str, v: Scalar, tree: SyntaxTree, node: Node) -> Scalar:
    if isinstance(v, Taylor):
        try:
            return getattr(v, func)()
        except DomainError as exc:
            raise DomainError(str(exc), tree.text(node)) from None
    if func == "log":
        _domain_check(np.asarray(v) <= 0, tree, node, "logarithm of a non-positive value")
    elif func == "sqrt":
        _domain_check(np.asarray(v) < 0, tree, node, "square root of a negative value")
    # numpy ufuncs for every non-jet input, so scalar, batched and jet values round identically
    with np.errstate(over="ignore"):
        return getattr(np, func)(v)


def _power(base: Scalar, exponent: Scalar, const_exp: bool, tree: SyntaxTree, node: Node) -> Scalar:
    if const_exp and not isinstance(exponent, (Taylor, np.ndarray)):
        p = float(exponent)
        if p.is_integer() and abs(p) <= 64:
            k = int(p)
            if isinstance(base, Taylor):
                try:
                    return base.ipow(k)
                except DomainError as exc:
                    raise DomainError(str(exc), tree.text(node)) from None
            if k < 0:
                _domain_check(np.asarray(base) == 0, tree, node, "division by zero")
            return _ipow(base, k)
        if isinstance(base, Taylor):
            try:
                return base.rpow(p)
            except DomainError as exc:
                raise DomainError(str(exc), tree.text(node)) from None
        _domain_check(np.asarray(base) < 0, tree, node, "fractional power of a negative value")
        return np.power(base, p)
    # variable exponent: b^e = exp(e log b)
    return _apply("exp", _mul(exponent, _apply("log", base, tree, node)), tree, node)


def _ipow(base, k: int):
    if k < 0:
        return 1.0 / _ipow(base, -k)
    result = 1.0
    while k:
        if k & 1:
            result = result * base
        k >>= 1
        if k:
            base = base * base
    return result


def _mul(a, b):
    return b * a if isinstance(b, Taylor) and not isinstance(a, Taylor) else a * b


def _eval(node: Node, point: Sequence[Scalar], tree: SyntaxTree) -> Scalar:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return point[node.index]
    if isinstance(node, Neg):
        return -_eval(node.child, point, tree)
    if isinstance(node, Call):
        return _apply(node.func, _eval(node.arg, point, tree), tree, node)
    a = _eval(node.left, point, tree)
    b = _eval(node.right, point, tree)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return _mul(a, b)
    if op == "/":
        if isinstance(b, Taylor):
            try:
                return b.__rtruediv__(a) if not isinstance(a, Taylor) else a / b
            except DomainError:
                raise DomainError("division by zero", tree.text(node)) from None
        _domain_check(np.asarray(b) == 0, tree, node, "division by zero")
        return a / b
    return _power(a, b, _is_constant(node.right), tree, node)


def evaluate(tree: SyntaxTree, point: Sequence[Scalar]) -> Scalar:
    """Evaluate ``tree`` at ``point`` (length ``tree.nvars``) over any scalar algebra.

    Raises :class:`DomainError` (naming the offending subexpression) for
    logarithms/roots of invalid arguments and division by zero.
    """
    if len(point) != tree.nvars:
        raise ValueError(f"point has {len(point)} entries, tree needs {tree.nvars}")
    return _eval(tree.root, point, tree)


def evaluate_array(tree: SyntaxTree, points: np.ndarray) -> np.ndarray:
    """Vectorized float evaluation at ``points[..., k]``; returns the batch shape."""
    points = np.asarray(points, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = evaluate(tree, [points[..., k] for k in range(points.shape[-1])])
    return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1]).copy()


# --- fields on M -----------------------------------------------------------
def _as_taylor(v, space, shape) -> Taylor:
    if isinstance(v, Taylor):
        return v
    return Taylor.constant(np.broadcast_to(np.asarray(v, dtype=float), shape), space)


@dataclass(frozen=True)
class ScalarField:
    """A smooth function f(x) on M given by one tree."""

    tree: SyntaxTree

    @classmethod
    def parse(cls, source: str, dimension: int) -> "ScalarField":
        return cls(parse(source, dimension))

    @property
    def dimension(self) -> int:
        return self.tree.dimension

    def __call__(self, x) -> np.ndarray:
        return evaluate_array(self.tree, x)

    def taylor(self, x, order: int) -> Taylor:
        x = np.asarray(x, dtype=float)
        space = jet_space(self.dimension, order)
        return _as_taylor(evaluate(self.tree, seed(x, space)), space, x.shape[:-1])


@dataclass(frozen=True)
class VectorField:
    """A vector field V = V^i(x) d/dx^i on M given by one tree per component."""

    trees: tuple[SyntaxTree, ...]

    @classmethod
    def parse(cls, sources: Sequence[str], dimension: int) -> "VectorField":
        if len(sources) != dimension:
            raise ValueError(f"vector field needs {dimension} components, got {len(sources)}")
        return cls(tuple(parse(s, dimension) for s in sources))

    @property
    def dimension(self) -> int:
        return len(self.trees)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([evaluate_array(t, x) for t in self.trees], axis=-1)

    def taylor(self, x, order: int) -> Taylor:
        """Components as jets in the n coordinates; shape ``batch + (n,)``."""
        x = np.asarray(x, dtype=float)
        space = jet_space(self.dimension, order)
        pt = seed(x, space)
        return stack([_as_taylor(evaluate(t, pt), space, x.shape[:-1]) for t in self.trees], axis=-1)
