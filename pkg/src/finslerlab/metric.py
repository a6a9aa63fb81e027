"""Finsler metrics: descriptions, norm, fundamental and Cartan tensors.

Three families are supported.  ``riemannian`` and ``randers`` are given by
coefficient trees a_ij(x) (and b_i(x)) and get closed-form evaluation;
``generic`` metrics are one tree F(x, y) and every tensor comes from
automatic differentiation of F^2.  Either family can be pushed through the
AD path (``method="ad"``), which is how the closed forms are cross-checked.

All array functions accept batches: ``x`` and ``y`` have shape
``batch + (n,)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import jsonschema
import numpy as np

from .errors import (DegenerateInput, DomainError, NotPositiveDefinite,
                     ParseError, SpecError)
from .expr import SyntaxTree, evaluate, evaluate_array, parse
from .taylor import Taylor, jet_space, seed, stack

__all__ = [
    "ManifoldSpec", "TangentSample", "TensorValue", "Violation", "ValidityReport",
    "finsler_norm", "fundamental_tensor", "cartan_tensor", "validate_spec",
    "coefficients", "measure_density", "SPEC_SCHEMA",
]

FAMILIES = ("riemannian", "randers", "generic")
PD_RATIO = 1e-10

SPEC_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "family": {"enum": list(FAMILIES)},
        "a": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
        "b": {"type": "array", "items": {"type": "string"}},
        "F": {"type": "string"},
        "measure": {"type": "string"},
    },
    "required": ["dimension", "family"],
    "additionalProperties": False,
}


# --- data types --------------------------------------------------------------
@dataclass(frozen=True)
class TangentSample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))


class TensorValue(np.ndarray):
    """Dense tensor components tagged with index variance ('u'/'d' per slot)."""

    def __new__(cls, array, variance: str, sample: TangentSample | None = None):
        obj = np.asarray(array, dtype=float).view(cls)
        obj.variance = variance
        obj.sample = sample
        return obj

    def __array_finalize__(self, obj):
        self.variance = getattr(obj, "variance", "")
        self.sample = getattr(obj, "sample", None)

    @property
    def rank(self) -> int:
        return len(self.variance)

    def is_symmetric(self, axes: Sequence[int] = (-2, -1), tol: float = 1e-12) -> bool:
        a = np.asarray(self)
        swapped = np.swapaxes(a, axes[0], axes[1])
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        return bool(np.max(np.abs(a - swapped), initial=0.0) <= tol * scale)


@dataclass(frozen=True)
class ManifoldSpec:
    """Symbolic description of a Finsler manifold with a smooth measure."""

    dimension: int
    family: str
    a: tuple[tuple[SyntaxTree, ...], ...] | None = None
    b: tuple[SyntaxTree, ...] | None = None
    F: SyntaxTree | None = None
    measure: SyntaxTree = None  # type: ignore[assignment]
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    # constructors --------------------------------------------------------
    @classmethod
    def riemannian(cls, a: Sequence[Sequence[str]], measure: str = "1") -> "ManifoldSpec":
        return cls.from_dict({"dimension": len(a), "family": "riemannian",
                              "a": [list(r) for r in a], "measure": measure})

    @classmethod
    def randers(cls, a: Sequence[Sequence[str]], b: Sequence[str], measure: str = "1") -> "ManifoldSpec":
        return cls.from_dict({"dimension": len(a), "family": "randers",
                              "a": [list(r) for r in a], "b": list(b), "measure": measure})

    @classmethod
    def generic(cls, F: str, dimension: int, measure: str = "1") -> "ManifoldSpec":
        return cls.from_dict({"dimension": dimension, "family": "generic", "F": F,
                              "measure": measure})

    @classmethod
    def euclidean(cls, dimension: int) -> "ManifoldSpec":
        a = [["1" if i == j else "0" for j in range(dimension)] for i in range(dimension)]
        return cls.riemannian(a)

    @classmethod
    def from_dict(cls, data: dict) -> "ManifoldSpec":
        try:
            jsonschema.validate(data, SPEC_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path)
            raise SpecError(f"schema violation: {exc.message}", path=path or None) from None
        n = data["dimension"]
        family = data["family"]
        required = {"riemannian": {"a"}, "randers": {"a", "b"}, "generic": {"F"}}[family]
        allowed = required | {"dimension", "family", "measure"}
        for key in required - data.keys():
            raise SpecError(f"family '{family}' requires key '{key}'", path=key)
        for key in data.keys() - allowed:
            raise SpecError(f"key '{key}' is not valid for family '{family}'", path=key)

        def tree(src: str, path: str, tangent: bool = False) -> SyntaxTree:
            try:
                return parse(src, n, tangent=tangent)
            except ParseError as exc:
                raise SpecError(f"{path}: {exc}", offset=exc.offset, path=path) from None

        a = b = F = None
        if "a" in data:
            rows = data["a"]
            if len(rows) != n or any(len(r) != n for r in rows):
                raise SpecError(f"'a' must be a {n}x{n} matrix", path="a")
            a = tuple(tuple(tree(s, f"a/{i}/{j}") for j, s in enumerate(r)) for i, r in enumerate(rows))
        if "b" in data:
            if len(data["b"]) != n:
                raise SpecError(f"'b' must have {n} entries", path="b")
            b = tuple(tree(s, f"b/{i}") for i, s in enumerate(data["b"]))
        if "F" in data:
            F = tree(data["F"], "F", tangent=True)
        measure = tree(data.get("measure", "1"), "measure")
        return cls(n, family, a, b, F, measure, raw=dict(data))

    @classmethod
    def from_json(cls, text: str) -> "ManifoldSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            offset = len(text[: exc.pos].encode("utf-8"))
            raise SpecError(f"malformed JSON: {exc.msg}", offset=offset) from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> "ManifoldSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise SpecError(f"cannot read spec file: {exc.strerror}", path=str(path)) from None
        return cls.from_json(text)

    def to_dict(self) -> dict:
        return dict(self.raw)

    def as_generic(self) -> "ManifoldSpec":
        """The same metric written as one F(x, y) tree, so it runs through the AD/Newton paths."""
        if self.family == "generic":
            return self
        n = self.dimension
        a = self.raw["a"]
        quad = " + ".join(f"({a[min(i, j)][max(i, j)]})*y{i + 1}*y{j + 1}"
                          for i in range(n) for j in range(n))
        F = f"sqrt({quad})"
        if self.family == "randers":
            F += " + " + " + ".join(f"({s})*y{i + 1}" for i, s in enumerate(self.raw["b"]))
        return ManifoldSpec.generic(F, n, self.raw.get("measure", "1"))


# --- coefficient evaluation -----------------------------------------------
def _upper(spec: ManifoldSpec, i: int, j: int) -> SyntaxTree:
    return spec.a[min(i, j)][max(i, j)]


def coefficients(spec: ManifoldSpec, x) -> tuple[np.ndarray, np.ndarray | None]:
    """a_ij(x) (symmetrized from the upper triangle) and b_i(x) as arrays."""
    x = np.asarray(x, dtype=float)
    n = spec.dimension
    a = np.empty(x.shape[:-1] + (n, n))
    for i in range(n):
        for j in range(i, n):
            a[..., i, j] = a[..., j, i] = evaluate_array(_upper(spec, i, j), x)
    b = None
    if spec.b is not None:
        b = np.stack([evaluate_array(t, x) for t in spec.b], axis=-1)
    return a, b


def _jet(tree: SyntaxTree, point: list, like: Taylor) -> Taylor:
    v = evaluate(tree, point)
    if isinstance(v, Taylor):
        return v
    return Taylor.constant(np.broadcast_to(np.asarray(v, dtype=float), like.shape), like.space)


def coefficient_jets(spec: ManifoldSpec, X: list[Taylor]) -> tuple[Taylor, Taylor | None]:
    n = spec.dimension
    like = X[0]
    entries = {}
    for i in range(n):
        for j in range(i, n):
            entries[i, j] = _jet(_upper(spec, i, j), X, like)
    a = stack([stack([entries[min(i, j), max(i, j)] for j in range(n)], axis=-1)
               for i in range(n)], axis=-2)
    b = None
    if spec.b is not None:
        b = stack([_jet(t, X, like) for t in spec.b], axis=-1)
    return a, b


def measure_density(spec: ManifoldSpec, x) -> np.ndarray:
    return evaluate_array(spec.measure, x)


def measure_jet(spec: ManifoldSpec, X: list[Taylor]) -> Taylor:
    return _jet(spec.measure, X, X[0])


def square_norm_jet(spec: ManifoldSpec, X: list[Taylor], Y: list[Taylor]) -> Taylor:
    """F^2 as a jet; X and Y are seeded (or constant) jets in a common space."""
    if spec.family == "generic":
        F = _jet(spec.F, list(X) + list(Y), X[0])
        return F * F
    a, b = coefficient_jets(spec, X)
    Yv = stack(Y, axis=-1)
    alpha2 = (a * Yv.expand(-2) * Yv.expand(-1)).sum((-2, -1))
    if spec.family == "riemannian":
        return alpha2
    F = alpha2.sqrt() + (b * Yv).sum(-1)
    return F * F


def _check_y(y: np.ndarray):
    if np.any(np.all(y == 0, axis=-1)):
        raise DegenerateInput("tangent vector y must be nonzero")


def _check_pd(g: np.ndarray, what: str = "fundamental tensor"):
    w = np.linalg.eigvalsh(g)
    if np.any(w[..., 0] <= PD_RATIO * np.abs(w[..., -1])):
        raise NotPositiveDefinite(f"{what} is not positive definite")


def _y_jets(spec: ManifoldSpec, x, y, order: int) -> Taylor:
    """F^2 as a jet in the n fiber variables at fixed x."""
    space = jet_space(spec.dimension, order)
    X = [Taylor.constant(x[..., i], space) for i in range(spec.dimension)]
    return square_norm_jet(spec, X, seed(y, space))


# --- public tensor operations ------------------------------------------------
def _norm(spec: ManifoldSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if spec.family == "generic":
        return evaluate_array(spec.F, np.concatenate([x, y], axis=-1))
    a, b = coefficients(spec, x)
    alpha = np.sqrt(np.einsum("...ij,...i,...j->...", a, y, y))
    if spec.family == "riemannian":
        return alpha
    return alpha + np.einsum("...i,...i->...", b, y)


def finsler_norm(spec: ManifoldSpec, x, y) -> np.ndarray | float:
    """F(x, y); y must be nonzero."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    _check_y(y)
    out = _norm(spec, x, y)
    return float(out) if out.ndim == 0 else out


def _randers_parts(a, b, y):
    alpha = np.sqrt(np.einsum("...ij,...i,...j->...", a, y, y))
    ylow = np.einsum("...ij,...j->...i", a, y)
    beta = np.einsum("...i,...i->...", b, y)
    return alpha, ylow / alpha[..., None], beta


def _fundamental(spec: ManifoldSpec, x, y, method: str = "auto") -> np.ndarray:
    if method == "ad" or spec.family == "generic":
        return 0.5 * _y_jets(spec, x, y, 2).hessian()
    a, b = coefficients(spec, x)
    if spec.family == "riemannian":
        return np.broadcast_to(a, x.shape[:-1] + a.shape[-2:]).copy()
    alpha, ahat, beta = _randers_parts(a, b, y)
    F = alpha + beta
    h = a - ahat[..., :, None] * ahat[..., None, :]
    ell = ahat + b
    return (F / alpha)[..., None, None] * h + ell[..., :, None] * ell[..., None, :]


def fundamental_tensor(spec: ManifoldSpec, x, y, method: str = "auto") -> TensorValue:
    """g_ij(x, y) = 1/2 d^2 F^2 / dy^i dy^j; checked positive definite."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    _check_y(y)
    g = _fundamental(spec, x, y, method)
    _check_pd(g)
    return TensorValue(g, "dd", TangentSample(x, y) if x.ndim == 1 else None)


def _cartan(spec: ManifoldSpec, x, y, method: str = "auto") -> np.ndarray:
    n = spec.dimension
    if method == "ad" or spec.family == "generic":
        return 0.25 * _y_jets(spec, x, y, 3).third()
    if spec.family == "riemannian":
        return np.zeros(x.shape[:-1] + (n, n, n))
    a, b = coefficients(spec, x)
    alpha, ahat, beta = _randers_parts(a, b, y)
    h = a - ahat[..., :, None] * ahat[..., None, :]
    rho = b - (beta / alpha)[..., None] * ahat
    c = (np.einsum("...ij,...k->...ijk", h, rho) + np.einsum("...jk,...i->...ijk", h, rho)
         + np.einsum("...ki,...j->...ijk", h, rho))
    return c / (2.0 * alpha)[..., None, None, None]


def cartan_tensor(spec: ManifoldSpec, x, y, method: str = "auto") -> TensorValue:
    """C_ijk = 1/4 d^3 F^2 / dy^i dy^j dy^k."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    _check_y(y)
    return TensorValue(_cartan(spec, x, y, method), "ddd",
                       TangentSample(x, y) if x.ndim == 1 else None)


# --- validation --------------------------------------------------------------
@dataclass(frozen=True)
class Violation:
    check: str
    message: str
    witness: dict

    def to_dict(self) -> dict:
        return {"check": self.check, "message": self.message, "witness": self.witness}


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple[Violation, ...]
    samples: int
    seed: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "samples": self.samples, "seed": self.seed,
                "violations": [v.to_dict() for v in self.violations]}


def _first(mask: np.ndarray) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def validate_spec(spec: ManifoldSpec, sample_count: int = 64, seed: int = 0,
                  radius: float = 1.0) -> ValidityReport:
    """Check the Minkowski-norm and measure invariants on random samples.

    Violations are returned as data, each with the first witnessing sample.
    """
    rng = np.random.default_rng(seed)
    n = spec.dimension
    xs = rng.uniform(-radius, radius, size=(sample_count, n))
    ys = rng.standard_normal((sample_count, n))
    found: list[Violation] = []

    def add(check, message, i, with_y=False):
        w = {"x": xs[i].tolist()}
        if with_y:
            w["y"] = ys[i].tolist()
        found.append(Violation(check, message, w))

    def per_sample(fn, check, with_y=False) -> np.ndarray | None:
        # batched evaluation; on a domain error locate the first bad sample
        try:
            return fn(xs, ys)
        except DomainError:
            for i in range(sample_count):
                try:
                    fn(xs[i], ys[i])
                except DomainError as exc:
                    add(check, str(exc), i, with_y)
                    return None
            return None

    sigma = per_sample(lambda x, y: measure_density(spec, x), "measure")
    if sigma is not None:
        i = _first(~(sigma > 0))
        if i is not None:
            add("measure", "measure density must be positive (sigma(x) > 0)", i)

    if spec.family in ("riemannian", "randers"):
        coeffs = per_sample(lambda x, y: coefficients(spec, x), "coefficients")
        if coeffs is not None:
            lower = np.empty((sample_count, n, n))
            for i in range(n):
                for j in range(n):
                    lower[:, i, j] = evaluate_array(spec.a[max(i, j)][min(i, j)], xs)
            a, b = coeffs
            i = _first(np.any(np.abs(lower - a) > 1e-12 * (1 + np.abs(a)), axis=(-2, -1)))
            if i is not None:
                add("a_symmetric", "a_ij is not symmetric", i)
            finite = np.all(np.isfinite(a), axis=(-2, -1))
            w = np.full((sample_count, n), -1.0)
            w[finite] = np.linalg.eigvalsh(a[finite])
            i = _first(w[:, 0] <= PD_RATIO * np.abs(w[:, -1]))
            if i is not None:
                add("a_positive_definite", "a_ij is not positive definite", i)
            elif spec.family == "randers":
                bb = np.einsum("...ij,...i,...j->...", np.linalg.inv(a), b, b)
                i = _first(~(bb < 1.0))
                if i is not None:
                    add("strong_convexity", "‖β‖_α ≥ 1 (Randers strong convexity)", i)
    else:
        Fv = per_sample(lambda x, y: _norm(spec, x, y), "norm", True)
        if Fv is not None:
            i = _first(~(Fv > 0))
            if i is not None:
                add("norm_positive", "F(x, y) must be positive for y != 0", i, True)
            F2 = per_sample(lambda x, y: _norm(spec, x, 2.0 * y), "norm", True)
            if F2 is not None:
                i = _first(np.abs(F2 - 2.0 * Fv) > 1e-9 * np.abs(Fv))
                if i is not None:
                    add("homogeneity", "F is not positively 1-homogeneous in y", i, True)
        g = per_sample(lambda x, y: _fundamental(spec, x, y), "fundamental_tensor", True)
        if g is not None:
            finite = np.all(np.isfinite(g), axis=(-2, -1))
            w = np.full((sample_count, n), -1.0)
            w[finite] = np.linalg.eigvalsh(g[finite])
            i = _first(w[:, 0] <= PD_RATIO * np.abs(w[:, -1]))
            if i is not None:
                add("NotPositiveDefinite", "fundamental tensor g_ij(x, y) is not positive definite", i, True)
    return ValidityReport(tuple(found), sample_count, seed)


def random_tangent(spec: ManifoldSpec, rng: np.random.Generator, count: int, radius: float = 0.8):
    x = rng.uniform(-radius, radius, size=(count, spec.dimension))
    y = rng.standard_normal((count, spec.dimension))
    return x, y
