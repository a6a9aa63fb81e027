"""Truncated multivariate Taylor polynomials ("jets") for forward-mode AD.

A :class:`Taylor` holds the Taylor coefficients, up to total degree
``order``, of a (possibly array-valued) smooth function of ``nvars``
variables around a base point.  Arithmetic and the elementary functions
propagate coefficients exactly, so after evaluating an expression on seeded
variables every partial derivative up to ``order`` is available.

Coefficients live in a trailing axis of a numpy array, so a ``Taylor`` can
represent a whole batch or a matrix of jets at once.  Monomials are ordered
by total degree; the coefficient vector of a lower-order jet is therefore a
prefix of the higher-order one, which makes truncation a slice.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = ["JetSpace", "Taylor", "jet_space", "seed", "stack", "inv", "matmul"]


def _monomials(nvars: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for combo in itertools.combinations_with_replacement(range(nvars), degree):
        exps = [0] * nvars
        for v in combo:
            exps[v] += 1
        out.append(tuple(exps))
    return out


class JetSpace:
    """Index bookkeeping for jets in ``nvars`` variables up to ``order``."""

    def __init__(self, nvars: int, order: int):
        if nvars < 1 or order < 0:
            raise ValueError("need nvars >= 1 and order >= 0")
        self.nvars = nvars
        self.order = order
        monos: list[tuple[int, ...]] = []
        for d in range(order + 1):
            monos.extend(_monomials(nvars, d))
        self.monomials = np.array(monos, dtype=int).reshape(len(monos), nvars)
        self.size = len(monos)
        self.index = {m: i for i, m in enumerate(monos)}
        self.degree = self.monomials.sum(axis=1)
        self.factorial = np.array(
            [math.prod(math.factorial(e) for e in m) for m in monos], dtype=float
        )

        left, right, target = [], [], []
        for i, mi in enumerate(monos):
            for j, mj in enumerate(monos):
                if self.degree[i] + self.degree[j] > order:
                    continue
                left.append(i)
                right.append(j)
                target.append(self.index[tuple(a + b for a, b in zip(mi, mj))])
        self._left = np.array(left, dtype=int)
        self._right = np.array(right, dtype=int)
        scatter = np.zeros((len(target), self.size))
        scatter[np.arange(len(target)), target] = 1.0
        self._scatter = scatter

    def multiply(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a[..., self._left] * b[..., self._right]) @ self._scatter

    def lower(self) -> "JetSpace":
        return jet_space(self.nvars, self.order - 1)

    @lru_cache(maxsize=None)
    def _derivative_map(self, var: int) -> tuple[np.ndarray, np.ndarray]:
        low = self.lower()
        src = np.empty(low.size, dtype=int)
        fac = np.empty(low.size)
        for k, m in enumerate(map(tuple, low.monomials)):
            up = list(m)
            up[var] += 1
            src[k] = self.index[tuple(up)]
            fac[k] = up[var]
        return src, fac

    def __repr__(self) -> str:
        return f"JetSpace(nvars={self.nvars}, order={self.order})"


@lru_cache(maxsize=None)
def jet_space(nvars: int, order: int) -> JetSpace:
    return JetSpace(nvars, order)


def _as_array(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


class Taylor:
    """An array of truncated Taylor polynomials sharing one :class:`JetSpace`.

    ``coef[..., k]`` is the coefficient of monomial ``space.monomials[k]``;
    partial derivatives are recovered by multiplying with the multi-index
    factorial (see :meth:`partial`).
    """

    __array_priority__ = 1000

    def __init__(self, coef: np.ndarray, space: JetSpace):
        coef = np.asarray(coef, dtype=float)
        if coef.shape[-1] != space.size:
            raise ValueError("coefficient axis does not match jet space")
        self.coef = coef
        self.space = space

    # construction -----------------------------------------------------
    @classmethod
    def constant(cls, value, space: JetSpace) -> "Taylor":
        value = _as_array(value)
        coef = np.zeros(value.shape + (space.size,))
        coef[..., 0] = value
        return cls(coef, space)

    @classmethod
    def variable(cls, value, var: int, space: JetSpace) -> "Taylor":
        t = cls.constant(value, space)
        if space.order >= 1:
            unit = [0] * space.nvars
            unit[var] = 1
            t.coef[..., space.index[tuple(unit)]] = 1.0
        return t

    @classmethod
    def from_derivatives(cls, value, gradient, space: JetSpace) -> "Taylor":
        """First-order jet from a value array and its gradient (trailing axis)."""
        if space.order != 1:
            raise ValueError("from_derivatives builds order-1 jets")
        value = _as_array(value)
        gradient = _as_array(gradient)
        coef = np.zeros(value.shape + (space.size,))
        coef[..., 0] = value
        coef[..., 1:] = gradient
        return cls(coef, space)

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.coef.shape[:-1]

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def value(self) -> np.ndarray:
        return self.coef[..., 0]

    def __len__(self) -> int:
        return self.shape[0]

    def __getitem__(self, key) -> "Taylor":
        if not isinstance(key, tuple):
            key = (key,)
        if any(k is Ellipsis for k in key):
            key = key + (slice(None),)
        return Taylor(self.coef[key], self.space)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"Taylor(shape={self.shape}, order={self.order}, value={self.value!r})"

    # derivatives ------------------------------------------------------
    def partial(self, *vars_: int) -> np.ndarray:
        """Value of the mixed partial derivative named by ``vars_`` at the base point."""
        if len(vars_) > self.order:
            raise ValueError("derivative order exceeds jet order")
        exps = [0] * self.space.nvars
        for v in vars_:
            exps[v] += 1
        k = self.space.index[tuple(exps)]
        return self.coef[..., k] * self.space.factorial[k]

    def gradient(self) -> np.ndarray:
        n = self.space.nvars
        return np.stack([self.partial(i) for i in range(n)], axis=-1)

    def hessian(self) -> np.ndarray:
        n = self.space.nvars
        out = np.empty(self.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                out[..., i, j] = out[..., j, i] = self.partial(i, j)
        return out

    def third(self) -> np.ndarray:
        n = self.space.nvars
        out = np.empty(self.shape + (n, n, n))
        for i, j, k in itertools.product(range(n), repeat=3):
            out[..., i, j, k] = self.partial(*sorted((i, j, k)))
        return out

    def deriv(self, var: int) -> "Taylor":
        """Jet of ``d/d(var)`` of this function, one order lower."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = self.space._derivative_map(var)
        return Taylor(self.coef[..., src] * fac, self.space.lower())

    def grad(self, vars_) -> "Taylor":
        """Stack of derivatives along a new trailing batch axis."""
        parts = [self.deriv(v) for v in vars_]
        return Taylor(np.stack([p.coef for p in parts], axis=-2), parts[0].space)

    def truncate(self, order: int) -> "Taylor":
        if order >= self.order:
            return self
        space = jet_space(self.space.nvars, order)
        return Taylor(self.coef[..., : space.size], space)

    # shape manipulation -----------------------------------------------
    def sum(self, axis) -> "Taylor":
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a - 1 if a < 0 else a for a in axes)
        return Taylor(self.coef.sum(axis=axes), self.space)

    def swapaxes(self, a: int, b: int) -> "Taylor":
        a = a - 1 if a < 0 else a
        b = b - 1 if b < 0 else b
        return Taylor(np.swapaxes(self.coef, a, b), self.space)

    def expand(self, axis: int) -> "Taylor":
        axis = axis - 1 if axis < 0 else axis
        return Taylor(np.expand_dims(self.coef, axis), self.space)

    # arithmetic -------------------------------------------------------
    def _coerce(self, other):
        """Bring ``other`` into a common space; returns (a_coef, b, space)."""
        if isinstance(other, Taylor):
            if other.space.nvars != self.space.nvars:
                raise ValueError("jets over different variable sets")
            order = min(self.order, other.order)
            a, b = self.truncate(order), other.truncate(order)
            return a.coef, b.coef, a.space
        return self.coef, _as_array(other), self.space

    def __add__(self, other):
        a, b, space = self._coerce(other)
        if isinstance(other, Taylor):
            return Taylor(a + b, space)
        coef = np.array(np.broadcast_to(a, np.broadcast_shapes(a.shape[:-1], b.shape) + a.shape[-1:]))
        coef[..., 0] += b
        return Taylor(coef, space)

    __radd__ = __add__

    def __neg__(self):
        return Taylor(-self.coef, self.space)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b, space = self._coerce(other)
        if isinstance(other, Taylor):
            a, b = np.broadcast_arrays(a, b)
            return Taylor(space.multiply(a, b), space)
        return Taylor(a * b[..., None], space)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Taylor):
            q = self * other.reciprocal()
            # correctly rounded value, matching plain float division
            q.coef[..., 0] = self.value / other.value
            return q
        other = _as_array(other)
        if np.any(other == 0):
            raise DomainError("division by zero")
        return Taylor(self.coef / other[..., None], self.space)

    def __rtruediv__(self, other):
        q = self.reciprocal() * other
        q.coef[..., 0] = _as_array(other) / self.value
        return q

    def __pow__(self, p):
        if isinstance(p, Taylor):
            return (self.log() * p).exp()
        p = float(p)
        if p.is_integer():
            return self.ipow(int(p))
        return self.rpow(p)

    def __rpow__(self, base):
        base = _as_array(base)
        if np.any(base <= 0):
            raise DomainError("non-positive base with variable exponent")
        return (self * np.log(base)).exp()

    # series composition -----------------------------------------------
    def _compose(self, coeffs: list[np.ndarray]) -> "Taylor":
        """Return sum_k coeffs[k] * h**k where h is the non-constant part."""
        h = Taylor(self.coef.copy(), self.space)
        h.coef[..., 0] = 0.0
        K = self.order
        result = Taylor.constant(coeffs[K], self.space)
        for k in range(K - 1, -1, -1):
            result = result * h + coeffs[k]
        return result

    def reciprocal(self) -> "Taylor":
        a = self.value
        if np.any(a == 0):
            raise DomainError("division by zero")
        return self._compose([(-1.0) ** k / a ** (k + 1) for k in range(self.order + 1)])

    def ipow(self, p: int) -> "Taylor":
        if p < 0:
            return self.reciprocal().ipow(-p)
        result = Taylor.constant(np.ones(self.shape), self.space)
        base = self
        while p:
            if p & 1:
                result = result * base
            p >>= 1
            if p:
                base = base * base
        return result

    def rpow(self, r: float) -> "Taylor":
        a = self.value
        if np.any(a < 0) or (np.any(a == 0) and self.order > 0):
            raise DomainError("fractional power of a non-positive value")
        coeffs = []
        c = 1.0
        for k in range(self.order + 1):
            coeffs.append(c * a ** (r - k))
            c = c * (r - k) / (k + 1)
        return self._compose(coeffs)

    def sqrt(self) -> "Taylor":
        a = self.value
        if np.any(a < 0) or (np.any(a == 0) and self.order > 0):
            raise DomainError("square root of a negative value")
        s = np.sqrt(a)
        coeffs, c = [], 1.0
        for k in range(self.order + 1):
            coeffs.append(c * s / a ** k if k else s)
            c = c * (0.5 - k) / (k + 1)
        return self._compose(coeffs)

    def exp(self) -> "Taylor":
        e = np.exp(self.value)
        return self._compose([e / math.factorial(k) for k in range(self.order + 1)])

    def log(self) -> "Taylor":
        a = self.value
        if np.any(a <= 0):
            raise DomainError("logarithm of a non-positive value")
        coeffs = [np.log(a)]
        for k in range(1, self.order + 1):
            coeffs.append((-1.0) ** (k + 1) / (k * a ** k))
        return self._compose(coeffs)

    def sin(self) -> "Taylor":
        a = self.value
        cyc = [np.sin(a), np.cos(a), -np.sin(a), -np.cos(a)]
        return self._compose([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def cos(self) -> "Taylor":
        a = self.value
        cyc = [np.cos(a), -np.sin(a), -np.cos(a), np.sin(a)]
        return self._compose([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def tanh(self) -> "Taylor":
        t = np.tanh(self.value)
        # d/dx P(tanh) = P'(tanh) * (1 - tanh^2)
        poly = np.polynomial.Polynomial([0.0, 1.0])
        sech2 = np.polynomial.Polynomial([1.0, 0.0, -1.0])
        coeffs = []
        for k in range(self.order + 1):
            coeffs.append(poly(t) / math.factorial(k))
            poly = poly.deriv() * sech2
        return self._compose(coeffs)


def seed(values, space: JetSpace, offset: int = 0) -> list[Taylor]:
    """Seed variables ``offset, offset+1, ...`` at ``values[..., i]``."""
    values = _as_array(values)
    return [Taylor.variable(values[..., i], offset + i, space)
            for i in range(values.shape[-1])]


def stack(items, axis: int = 0) -> Taylor:
    """Stack jets (or plain numbers, treated as constants) along a new axis."""
    items = list(items)
    jets = [t for t in items if isinstance(t, Taylor)]
    if not jets:
        raise ValueError("stack needs at least one Taylor")
    order = min(t.order for t in jets)
    space = jet_space(jets[0].space.nvars, order)
    shape = np.broadcast_shapes(*[t.shape if isinstance(t, Taylor) else np.shape(t) for t in items])
    coefs = []
    for t in items:
        if not isinstance(t, Taylor):
            t = Taylor.constant(t, space)
        c = t.truncate(order).coef
        coefs.append(np.broadcast_to(c, shape + (space.size,)))
    axis = axis - 1 if axis < 0 else axis
    return Taylor(np.stack(coefs, axis=axis), space)


def matmul(a, b) -> Taylor:
    """Matrix product over the last two batch axes; either side may be a plain array."""
    if not isinstance(a, Taylor):
        return Taylor(np.einsum("...ij,...jkc->...ikc", _as_array(a), b.coef), b.space)
    if not isinstance(b, Taylor):
        return Taylor(np.einsum("...ijc,...jk->...ikc", a.coef, _as_array(b)), a.space)
    return (a.expand(-1) * b.expand(-3)).sum(-2)


def matvec(a, v) -> Taylor:
    """``a @ v`` for a matrix of jets (or plain matrix) and a vector of jets."""
    if not isinstance(a, Taylor):
        return Taylor(np.einsum("...ij,...jc->...ic", _as_array(a), v.coef), v.space)
    return (a * v.expand(-2)).sum(-1)


def inv(m: Taylor) -> Taylor:
    """Inverse of a matrix of jets via the terminating Neumann series."""
    a0 = np.linalg.inv(m.value)
    h = Taylor(m.coef.copy(), m.space)
    h.coef[..., 0] = 0.0
    x = Taylor.constant(a0, m.space)
    ah = matmul(-a0, h)
    for _ in range(m.order):
        x = matmul(ah, x) + a0
    return x


def _align(t: Taylor, subs: str, full: str) -> np.ndarray:
    """Coefficients of ``t`` with index axes reordered to ``full`` (size-1 where absent)."""
    coef = t.coef
    nb = coef.ndim - 1 - len(subs)
    order = [subs.index(c) for c in full if c in subs]
    coef = np.moveaxis(coef, [nb + k for k in order], list(range(nb, nb + len(order))))
    present = [c for c in full if c in subs]
    for pos, c in enumerate(full):
        if c not in subs:
            coef = np.expand_dims(coef, nb + pos)
            present.insert(pos, c)
    return coef


def einsum(subscripts: str, a, b) -> Taylor:
    """Two-operand einsum over the trailing index axes, with implicit leading batch axes.

    ``subscripts`` uses explicit output, e.g. ``"il,ljk->ijk"``; at most one of
    ``a``, ``b`` may be a plain array.
    """
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    if not isinstance(b, Taylor):
        return Taylor(np.einsum(f"...{sa}Z,...{sb}->...{out}Z", a.coef, _as_array(b)), a.space)
    if not isinstance(a, Taylor):
        return Taylor(np.einsum(f"...{sa},...{sb}Z->...{out}Z", _as_array(a), b.coef), b.space)
    full = "".join(dict.fromkeys(sa + sb))
    A = Taylor(_align(a, sa, full), a.space)
    B = Taylor(_align(b, sb, full), b.space)
    prod = A * B
    k = len(full)
    summed = tuple(-(k - pos) for pos, c in enumerate(full) if c not in out)
    if summed:
        prod = prod.sum(summed)
    kept = "".join(c for c in full if c in out)
    nb = prod.coef.ndim - 1 - len(kept)
    perm = [kept.index(c) for c in out]
    coef = np.moveaxis(prod.coef, [nb + p for p in perm], list(range(nb, nb + len(perm))))
    return Taylor(coef, prod.space)


def transpose(t: Taylor, subs_in: str, subs_out: str) -> Taylor:
    """Permute the trailing index axes, e.g. ``transpose(t, "ljk", "jkl")``."""
    nb = t.coef.ndim - 1 - len(subs_in)
    src = [nb + subs_in.index(c) for c in subs_out]
    return Taylor(np.moveaxis(t.coef, src, list(range(nb, nb + len(src)))), t.space)
