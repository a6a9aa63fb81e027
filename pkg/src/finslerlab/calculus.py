"""Differential operators on a Finsler manifold with a smooth measure.

* gradient, divergence, Laplacian and p-Laplacian at points of M
* the geodesic Hessian D^2 f(y) and the Chern Hessian matrix u_{|i|j}(x, grad u)
* the Randers gradient formula and the gradient estimate
* Lie derivatives along the complete lift V^ = V^i d/dx^i + y^m dV^i/dx^m d/dy^i

Fields may be given as :class:`ScalarField` / :class:`VectorField` objects or as
expression strings.  Points are arrays of shape ``batch + (n,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .connection import ConnectionEval, evaluate_connection, field_derivatives
from .errors import DegenerateGradient, FamilyMismatch, UnsupportedVariance
from .expr import ScalarField, VectorField
from .legendre import dual_norm, legendre_inverse, newton_legendre_inverse
from .metric import (ManifoldSpec, _norm, coefficient_jets, coefficients, measure_jet,
                     square_norm_jet)
from .taylor import Taylor, inv, jet_space, matvec, seed, stack

__all__ = [
    "GradientResult", "GradientField", "gradient", "gradient_estimate", "divergence",
    "laplacian", "p_laplacian", "hessian_geodesic", "hessian_matrix", "complete_lift",
    "lie_metric", "lie_finsler", "lie_chern", "lie_spray", "lie_tensor", "hessian_via_lie",
    "covariant_first", "covariant_second",
]


def _scalar_field(f, n) -> ScalarField:
    return ScalarField.parse(f, n) if isinstance(f, str) else f


def _vector_field(V, n) -> VectorField:
    if isinstance(V, (list, tuple)) and all(isinstance(s, str) for s in V):
        return VectorField.parse(list(V), n)
    return V


def _one(v):
    return float(v) if np.ndim(v) == 0 else v


# --- gradient ----------------------------------------------------------------
@dataclass
class GradientResult:
    """grad f at x together with the duality data; Randers fields are None otherwise."""

    grad: np.ndarray
    F_grad: np.ndarray
    F_star_df: np.ndarray
    df: np.ndarray
    critical: np.ndarray
    A: np.ndarray | None = None
    beta_dot: np.ndarray | None = None  # <beta#, grad^alpha f>_alpha
    alpha_norm: np.ndarray | None = None  # ||grad^alpha f||_alpha
    b: np.ndarray | None = None  # ||beta||_alpha

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if v is not None:
                out[k] = np.asarray(v).tolist()
        return out


def _randers_gradient(a, b, xi):
    """Closed-form gradient of a Randers metric (numpy arrays)."""
    ainv = np.linalg.inv(a)
    ga = np.einsum("...ij,...j->...i", ainv, xi)
    bs = np.einsum("...ij,...j->...i", ainv, b)
    b2 = np.einsum("...i,...i->...", bs, b)
    s = 1.0 - b2
    nrm2 = np.einsum("...i,...i->...", ga, xi)
    dot = np.einsum("...i,...i->...", b, ga)
    A = np.sqrt(s * nrm2 + dot * dot)
    safe = np.where(A > 0, A, 1.0)
    c1 = (A - dot) / (safe * s)
    c2 = (A - dot) ** 2 / (safe * s * s)
    grad = c1[..., None] * ga - c2[..., None] * bs
    grad = np.where((A > 0)[..., None], grad, 0.0)
    return grad, A, dot, np.sqrt(nrm2), np.sqrt(b2)


def _differential(f: ScalarField, x: np.ndarray) -> np.ndarray:
    return f.taylor(x, 1).gradient()


def gradient(spec: ManifoldSpec, f, x, method: str = "auto") -> GradientResult:
    """grad f(x) = L^-1(df(x)), with grad f = 0 where df = 0.

    For Randers metrics ``method="formula"`` (the default) uses the closed
    gradient formula and ``method="legendre"`` inverts the Legendre map.
    """
    f = _scalar_field(f, spec.dimension)
    x = np.asarray(x, dtype=float)
    xi = _differential(f, x)
    critical = np.all(xi == 0, axis=-1)
    extra = {}
    if spec.family == "randers":
        a, b = coefficients(spec, x)
        grad, A, dot, nrm, bn = _randers_gradient(a, b, xi)
        extra = dict(A=A, beta_dot=dot, alpha_norm=nrm, b=bn)
        if method == "legendre":
            grad = legendre_inverse(spec, x, xi)
    else:
        grad = legendre_inverse(spec, x, xi)
    safe = np.where(critical[..., None], 1.0, grad)
    F = np.where(critical, 0.0, _norm(spec, x, safe))
    Fs = np.asarray(dual_norm(spec, x, xi))
    return GradientResult(grad, F, Fs, xi, critical, **extra)


def gradient_estimate(spec: ManifoldSpec, f, x):
    """(F(x, grad f), alpha(x, grad^alpha f) / (1 - b)) for a Randers metric."""
    if spec.family != "randers":
        raise FamilyMismatch(f"the gradient estimate needs a randers spec, got '{spec.family}'")
    r = gradient(spec, f, x)
    return _one(r.F_grad), _one(r.alpha_norm / (1.0 - r.b))


def _gradient_jet(spec: ManifoldSpec, f: ScalarField, x: np.ndarray, order: int = 1):
    """(df, grad f) as jets in x of the given order, shape ``batch + (n,)``."""
    n = spec.dimension
    xi = f.taylor(x, order + 1).grad(range(n))
    if np.any(np.all(xi.value == 0, axis=-1)):
        raise DegenerateGradient("df(x) = 0: the operator needs a nonzero gradient")
    space = jet_space(n, order)
    if spec.family == "generic":
        if order != 1:
            raise ValueError("generic gradient jets are available to first order only")
        yv = newton_legendre_inverse(spec, x, xi.value)
        big = jet_space(2 * n, 2)
        X, Y = seed(x, big, 0), seed(yv, big, n)
        H = 0.5 * square_norm_jet(spec, X, Y).hessian()
        g, mixed = H[..., n:, n:], H[..., n:, :n]  # mixed[i, k] = d^2(F^2/2)/dy^i dx^k
        J = np.linalg.solve(g, xi.gradient() - mixed)
        return xi, Taylor.from_derivatives(yv, J, space)
    X = seed(x, space)
    a, b = coefficient_jets(spec, X)
    ainv = inv(a)
    ga = matvec(ainv, xi)
    if spec.family == "riemannian":
        return xi, ga
    bs = matvec(ainv, b)
    s = 1.0 - (bs * b).sum(-1)
    dot = (b * ga).sum(-1)
    A = (s * (ga * xi).sum(-1) + dot * dot).sqrt()
    c1 = (A - dot) / (A * s)
    c2 = (A - dot) * (A - dot) / (A * s * s)
    return xi, c1.expand(-1) * ga - c2.expand(-1) * bs


class GradientField:
    """The vector field x -> grad f(x), usable wherever a VectorField is."""

    def __init__(self, spec: ManifoldSpec, f):
        self.spec = spec
        self.f = _scalar_field(f, spec.dimension)

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def __call__(self, x) -> np.ndarray:
        return gradient(self.spec, self.f, x).grad

    def taylor(self, x, order: int) -> Taylor:
        return _gradient_jet(self.spec, self.f, np.asarray(x, dtype=float), order)[1]


def _divergence_of(spec: ManifoldSpec, Y: Taylor, x: np.ndarray) -> np.ndarray:
    n = spec.dimension
    sig = measure_jet(spec, seed(x, Y.space))
    flux = sig.expand(-1) * Y
    total = sum(flux[..., i].deriv(i).value for i in range(n))
    return total / sig.value


def divergence(spec: ManifoldSpec, X, x):
    """div X = (1/sigma) d(sigma X^i)/dx^i."""
    X = _vector_field(X, spec.dimension)
    x = np.asarray(x, dtype=float)
    return _one(_divergence_of(spec, X.taylor(x, 1), x))


def laplacian(spec: ManifoldSpec, f, x):
    """Delta f = div(grad f); rejects points where df = 0."""
    f = _scalar_field(f, spec.dimension)
    x = np.asarray(x, dtype=float)
    _, Y = _gradient_jet(spec, f, x)
    return _one(_divergence_of(spec, Y, x))


def p_laplacian(spec: ManifoldSpec, f, x, p: float):
    """div(F(grad f)^(p-2) grad f); p = 2 is the Laplacian."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    f = _scalar_field(f, spec.dimension)
    x = np.asarray(x, dtype=float)
    xi, Y = _gradient_jet(spec, f, x)
    if p != 2:
        F2 = (xi * Y).sum(-1)  # F(grad f)^2 = df(grad f)
        Y = (F2 ** ((p - 2.0) / 2.0)).expand(-1) * Y
    return _one(_divergence_of(spec, Y, x))


# --- Hessians -----------------------------------------------------------------
def hessian_geodesic(spec: ManifoldSpec, f, x, y, method: str = "chern"):
    """D^2 f(y) = (d^2f/dx^i dx^j - df/dx^m Gamma^m_ij(x, y)) y^i y^j.

    ``method="spray"`` evaluates the equivalent d^2f(y, y) - 2 df/dx^i G^i.
    """
    f = _scalar_field(f, spec.dimension)
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    fj = f.taylor(x, 2)
    df, H = fj.gradient(), fj.hessian()
    quad = np.einsum("...ij,...i,...j->...", H, y, y)
    if method == "spray":
        G = evaluate_connection(spec, x, y, order=2).G
        return _one(quad - 2.0 * np.einsum("...i,...i->...", df, G))
    Gam = evaluate_connection(spec, x, y, order=3).Gamma
    return _one(quad - np.einsum("...m,...mij,...i,...j->...", df, Gam, y, y))


def hessian_matrix(spec: ManifoldSpec, u, x) -> np.ndarray:
    """Hess(u)_ij = u_{|i|j}(x, grad u) with the Chern connection at y = grad u."""
    u = _scalar_field(u, spec.dimension)
    x = np.asarray(x, dtype=float)
    r = gradient(spec, u, x)
    if np.any(r.critical):
        raise DegenerateGradient("du(x) = 0: Hess(u) needs the reference vector grad u != 0")
    Gam = evaluate_connection(spec, x, r.grad, order=3).Gamma
    H = u.taylor(x, 2).hessian()
    return H - np.einsum("...m,...mij->...ij", r.df, Gam)


# --- Lie derivatives -----------------------------------------------------------
def complete_lift(V, x, y):
    """(V^i(x), y^m dV^i/dx^m): horizontal and vertical parts of V^."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    V = _vector_field(V, x.shape[-1])
    val, jac, _ = field_derivatives(V, x, order=1)
    return val, np.einsum("...im,...m->...i", jac, y)


@dataclass
class _LieData:
    conn: ConnectionEval
    V: np.ndarray  # V^i
    DV: np.ndarray  # [i, j] = dV^i/dx^j
    D2V: np.ndarray | None  # [i, j, k]
    V1: np.ndarray  # [i, j] = V^i_{|j}

    @property
    def ydot(self) -> np.ndarray:
        return np.einsum("...im,...m->...i", self.DV, self.conn.y)


def _lie_data(spec, V, x, y, order):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    V = _vector_field(V, spec.dimension)
    conn = evaluate_connection(spec, x, y, order=order)
    Vv, DV, D2V = field_derivatives(V, x, order=2 if order >= 4 else 1)
    V1 = DV + np.einsum("...m,...imj->...ij", Vv, conn.Gamma)
    return _LieData(conn, Vv, DV, D2V, V1)


def covariant_first(spec, V, x, y) -> np.ndarray:
    """V^i_{|j} indexed [..., i, j]."""
    return _lie_data(spec, V, x, y, 3).V1


def _second(d: _LieData) -> np.ndarray:
    Gam = d.conn.Gamma
    delta_V1 = (d.D2V + np.einsum("...mk,...imj->...ijk", d.DV, Gam)
                + np.einsum("...m,...imjk->...ijk", d.V, d.conn.delta_Gamma))
    return (delta_V1 + np.einsum("...mj,...imk->...ijk", d.V1, Gam)
            - np.einsum("...im,...mjk->...ijk", d.V1, Gam))


def covariant_second(spec, V, x, y) -> np.ndarray:
    """V^i_{|j|k} indexed [..., i, j, k]."""
    return _second(_lie_data(spec, V, x, y, 4))


def lie_metric(spec: ManifoldSpec, V, x, y) -> np.ndarray:
    """L_V^ g_ij = V_{j|i} + V_{i|j} + 2 y^m V^l_{|m} C_lij, with V_i = g_ij V^j."""
    d = _lie_data(spec, V, x, y, 3)
    low = np.einsum("...il,...lj->...ij", d.conn.g, d.V1)  # V_{i|j}
    w = np.einsum("...lm,...m->...l", d.V1, d.conn.y)
    return low + np.swapaxes(low, -1, -2) + 2.0 * np.einsum("...l,...lij->...ij", w, d.conn.C)


def lie_finsler(spec: ManifoldSpec, V, x, y, method: str = "formula"):
    """L_V^ F = V_{0|0} / F (``formula``) or V^ applied to F by AD (``direct``)."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    n = spec.dimension
    if method == "direct":
        V = _vector_field(V, n)
        hv, vv = complete_lift(V, x, y)
        space = jet_space(2 * n, 1)
        E = square_norm_jet(spec, seed(x, space, 0), seed(y, space, n))
        dE = E.gradient()
        F = np.sqrt(E.value)
        return _one((np.einsum("...i,...i->...", hv, dE[..., :n])
                     + np.einsum("...i,...i->...", vv, dE[..., n:])) / (2.0 * F))
    d = _lie_data(spec, V, x, y, 3)
    low = np.einsum("...il,...lj->...ij", d.conn.g, d.V1)
    V00 = np.einsum("...ij,...i,...j->...", low, y, y)
    return _one(V00 / np.sqrt(np.einsum("...ij,...i,...j->...", d.conn.g, y, y)))


def lie_chern(spec: ManifoldSpec, V, x, y, method: str = "direct") -> np.ndarray:
    """L_V^ Gamma^i_jk, indexed [..., i, j, k].

    ``direct``: second derivatives of V, Gamma and its x-derivatives, and P.
    ``curvature``: R_j^i_mk V^m + V^i_{|j|k} + y^m V^l_{|m} P_j^i_kl.
    """
    return _lie_chern(_lie_data(spec, V, x, y, 4), method)


def _lie_chern(d: _LieData, method: str) -> np.ndarray:
    c = d.conn
    Gam, dGy, y = c.Gamma, c.dGamma_dy, c.y
    if method == "curvature":
        w = np.einsum("...lm,...m->...l", d.V1, y)
        return (np.einsum("...jimk,...m->...ijk", c.R, d.V) + _second(d)
                + np.einsum("...l,...ijkl->...ijk", w, dGy))
    DV = d.DV
    return (d.D2V
            + np.einsum("...ilj,...lk->...ijk", Gam, DV)
            + np.einsum("...ikl,...lj->...ijk", Gam, DV)
            - np.einsum("...lkj,...il->...ijk", Gam, DV)
            + np.einsum("...l,...ikjl->...ijk", d.V, c.dGamma_dx)
            + np.einsum("...l,...ikjl->...ijk", d.ydot, dGy))


def lie_spray(spec: ManifoldSpec, V, x, y, method: str = "bracket") -> np.ndarray:
    """L_V^ G^k: the d/dy^k component of [V^, G] for G = y^i d/dx^i - 2 G^i d/dy^i.

    ``bracket``: the bracket of the two vector fields on TM from AD derivatives of G^k.
    ``contraction``: -y^i y^j L_V^ Gamma^k_ij.
    ``curvature``: -(R^k_m V^m + V^k_{|0|0}) with R^k_m = y^i R_i^k_mj y^j.
    """
    d = _lie_data(spec, V, x, y, 4)
    c = d.conn
    y = c.y
    if method == "bracket":
        VhG = np.einsum("...i,...ki->...k", d.V, c.dG_dx) + np.einsum("...i,...ki->...k", d.ydot, c.dG_dy)
        return (-2.0 * VhG - np.einsum("...kim,...i,...m->...k", d.D2V, y, y)
                + 2.0 * np.einsum("...i,...ki->...k", c.G, d.DV))
    if method == "contraction":
        return -np.einsum("...kij,...i,...j->...k", _lie_chern(d, "direct"), y, y)
    Rkm = np.einsum("...i,...ikmj,...j->...km", y, c.R, y)
    return -(np.einsum("...km,...m->...k", Rkm, d.V) + np.einsum("...kij,...i,...j->...k", _second(d), y, y))


# --- general tensors -------------------------------------------------------------
def _tensor_g(spec, X, Y):
    n = spec.dimension
    E = square_norm_jet(spec, X, Y)
    yv = range(n, 2 * n)
    return 0.5 * E.grad(yv).grad(yv)


def _tensor_y(spec, X, Y):
    return stack(Y, axis=-1)


def _tensor_ylow(spec, X, Y):
    n = spec.dimension
    return 0.5 * square_norm_jet(spec, X, Y).grad(range(n, 2 * n))


BUILTIN_TENSORS: dict[str, tuple[Callable, str]] = {
    "g": (_tensor_g, "dd"),
    "y": (_tensor_y, "u"),
    "ylow": (_tensor_ylow, "d"),
}


def _apply(T: np.ndarray, M: np.ndarray, ax: int) -> np.ndarray:
    """out[.., i (at axis ax), ..] = sum_a M[.., i, a] T[.., a (at axis ax), ..]."""
    Tm = np.moveaxis(T, ax, -1)
    k = Tm.ndim - 1 - (M.ndim - 2)
    Mb = M.reshape(M.shape[:-2] + (1,) * k + M.shape[-2:])
    out = (Mb @ Tm[..., None])[..., 0]
    return np.moveaxis(out, -1, ax)


def lie_tensor(spec: ManifoldSpec, V, T, x, y, variance: str | None = None,
               method: str = "covariant", order: int = 3) -> np.ndarray:
    """Lie derivative along V^ of a tensor field on the pulled-back bundle.

    ``T`` is a builtin name ("g", "y", "ylow") or a callable ``T(spec, X, Y)``
    mapping seeded jets (2n variables, jet order ``order``) to a jet with
    trailing tensor axes described by ``variance`` (at most one leading 'u',
    then up to two 'd').  ``method`` selects the partial-derivative form or the
    covariant form with the Chern connection; they agree.
    """
    if isinstance(T, str):
        T, default = BUILTIN_TENSORS[T]
        variance = variance or default
    variance = variance or ""
    if variance not in ("", "u", "d", "dd", "ud", "udd"):
        raise UnsupportedVariance(f"variance '{variance}' is not supported (use (0,k) or (1,k), k <= 2)")
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    n = spec.dimension
    space = jet_space(2 * n, order)
    Tj = T(spec, seed(x, space, 0), seed(y, space, n))
    rank = len(variance)
    Tv = Tj.value
    grad = Tj.gradient()
    dTx, dTy = grad[..., :n], grad[..., n:]
    nb = Tv.ndim - rank  # batch rank
    d = _lie_data(spec, V, x, y, 3)
    if method == "partial":
        out = np.einsum("...m,...m->...", dTx, _bcast(d.V, rank)) + np.einsum("...m,...m->...", dTy, _bcast(d.ydot, rank))
        for s, kind in enumerate(variance):
            ax = nb + s
            if kind == "u":
                out = out - _apply(Tv, d.DV, ax)
            else:
                out = out + _apply(Tv, np.swapaxes(d.DV, -1, -2), ax)
        return out
    Gam, N = d.conn.Gamma, d.conn.N
    # T_{|m}, horizontal covariant derivative, trailing index m
    cov = dTx - np.einsum("...r,...rm->...m", dTy, _bcast(N, rank, 2))
    cov = np.array(cov)
    for m in range(n):
        Gm = Gam[..., m]  # [a, b] = Gamma^a_bm
        part = np.zeros_like(Tv)
        for s, kind in enumerate(variance):
            ax = nb + s
            if kind == "u":
                part = part + _apply(Tv, Gm, ax)
            else:
                part = part - _apply(Tv, np.swapaxes(Gm, -1, -2), ax)
        cov[..., m] += part
    w = np.einsum("...lm,...m->...l", d.V1, y)
    out = np.einsum("...m,...m->...", cov, _bcast(d.V, rank)) + np.einsum("...l,...l->...", dTy, _bcast(w, rank))
    for s, kind in enumerate(variance):
        ax = nb + s
        if kind == "u":
            out = out - _apply(Tv, d.V1, ax)
        else:
            out = out + _apply(Tv, np.swapaxes(d.V1, -1, -2), ax)
    return out


def _bcast(a: np.ndarray, rank: int, trailing: int = 1) -> np.ndarray:
    """Insert ``rank`` singleton axes before the last ``trailing`` axes of a batch array."""
    shape = a.shape[: a.ndim - trailing] + (1,) * rank + a.shape[a.ndim - trailing:]
    return a.reshape(shape)


def hessian_via_lie(spec: ManifoldSpec, u, x, return_correction: bool = False):
    """Hess(u) = 1/2 L_{grad u^} g(x, grad u) - grad^m u u_{|r|m} C^r_ij, at y = grad u."""
    u = _scalar_field(u, spec.dimension)
    x = np.asarray(x, dtype=float)
    field = GradientField(spec, u)
    r = gradient(spec, u, x)
    if np.any(r.critical):
        raise DegenerateGradient("du(x) = 0: Hess(u) needs the reference vector grad u != 0")
    Lg = lie_metric(spec, field, x, r.grad)
    H = hessian_matrix(spec, u, x)
    conn = evaluate_connection(spec, x, r.grad, order=3)
    Cup = np.einsum("...rl,...lij->...rij", conn.ginv, conn.C)
    corr = np.einsum("...m,...rm,...rij->...ij", r.grad, H, Cup)
    out = 0.5 * Lg - corr
    return (out, corr) if return_correction else out
