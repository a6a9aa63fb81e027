"""Geodesic spray, nonlinear connection, Chern connection and its curvatures.

Everything is derived from one jet of F^2 in the 2n variables (x, y):

* spray       G^i = 1/4 g^il ([F^2]_{x^k y^l} y^k - [F^2]_{x^l})
* connection  N^i_j = dG^i/dy^j, with delta/delta x^k = d/dx^k - N^r_k d/dy^r
* Chern       Gamma^i_jk = 1/2 g^il (dg_lj/dx^k + dg_lk/dx^j - dg_jk/dx^l), using delta/delta x
* curvature   R_j^i_km = dGamma^i_mj/dx^k - dGamma^i_jk/dx^m
                        + Gamma^l_jm Gamma^i_kl - Gamma^i_lm Gamma^l_jk, using delta/delta x
* Landsberg   P_k^i_jl = dGamma^i_kj/dy^l

Array index conventions: ``Gamma[..., i, j, k]`` is Gamma^i_jk,
``R[..., j, i, k, m]`` is R_j^i_km and ``P[..., k, i, j, l]`` is P_k^i_jl.
Jet order 4 in (x, y) is what the derivatives of Gamma require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import ManifoldSpec, _check_y, square_norm_jet
from .taylor import einsum, inv, jet_space, matvec, seed, stack, transpose

__all__ = [
    "ConnectionEval", "evaluate_connection", "spray_coefficients", "nonlinear_connection",
    "chern_coefficients", "riemann_curvature", "landsberg_P",
    "horizontal_covariant_vector", "second_horizontal_covariant", "field_derivatives",
]


@dataclass
class ConnectionEval:
    """Connection data at a batch of tangent samples (numpy arrays)."""

    x: np.ndarray
    y: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    G: np.ndarray
    N: np.ndarray | None = None
    Gamma: np.ndarray | None = None
    C: np.ndarray | None = None
    delta_g: np.ndarray | None = None  # [..., i, j, k] = delta g_ij / delta x^k
    dG_dx: np.ndarray | None = None  # [..., i, k] = dG^i/dx^k
    dG_dy: np.ndarray | None = None
    dGamma_dx: np.ndarray | None = None  # [..., i, j, k, l] = dGamma^i_jk/dx^l
    dGamma_dy: np.ndarray | None = None

    @property
    def delta_Gamma(self) -> np.ndarray:
        """delta Gamma^i_jk / delta x^l, indexed [..., i, j, k, l]."""
        return self.dGamma_dx - np.einsum("...rl,...ijkr->...ijkl", self.N, self.dGamma_dy)

    @property
    def R(self) -> np.ndarray:
        dG = self.delta_Gamma
        Gam = self.Gamma
        t1 = np.einsum("...imjk->...jikm", dG)
        t2 = np.einsum("...ijkm->...jikm", dG)
        t3 = np.einsum("...ljm,...ikl->...jikm", Gam, Gam)
        t4 = np.einsum("...ilm,...ljk->...jikm", Gam, Gam)
        return t1 - t2 + t3 - t4

    @property
    def metric_covariant(self) -> np.ndarray:
        """g_ij|k = delta g_ij/delta x^k - g_lj Gamma^l_ik - g_il Gamma^l_jk (vanishes)."""
        return (self.delta_g - np.einsum("...lj,...lik->...ijk", self.g, self.Gamma)
                - np.einsum("...il,...ljk->...ijk", self.g, self.Gamma))

    @property
    def P(self) -> np.ndarray:
        return np.einsum("...ikjl->...kijl", self.dGamma_dy)


def evaluate_connection(spec: ManifoldSpec, x, y, order: int = 4) -> ConnectionEval:
    """Run the jet pipeline at jet order ``order`` (2: spray; 3: Gamma; 4: derivatives)."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    _check_y(y)
    n = spec.dimension
    xv, yv = range(n), range(n, 2 * n)
    space = jet_space(2 * n, order)
    X = seed(x, space, 0)
    Y = seed(y, space, n)
    E = square_norm_jet(spec, X, Y)

    Ey = E.grad(yv)
    Ex = E.grad(xv)
    g = 0.5 * Ey.grad(yv)
    Exy = Ex.grad(yv)  # [k, l] = d^2 F^2 / dx^k dy^l
    w = einsum("kl,k->l", Exy, stack(Y, axis=-1)) - Ex
    ginv = inv(g)
    G = 0.25 * matvec(ginv, w)

    out = ConnectionEval(x, y, g.value, ginv.value, G.value)
    if order < 3:
        return out
    Gg = G.gradient()
    out.dG_dx, out.dG_dy = Gg[..., :n], Gg[..., n:]
    N = G.grad(yv)
    dgx = g.grad(xv)  # [l, j, k]
    dgy = g.grad(yv)
    dg = dgx - einsum("ljr,rk->ljk", dgy, N)
    S = dg + transpose(dg, "ljk", "lkj") - transpose(dg, "jkl", "ljk")
    Gamma = 0.5 * einsum("il,ljk->ijk", ginv, S)
    out.N = N.value
    out.Gamma = Gamma.value
    out.C = 0.5 * dgy.value
    out.delta_g = dg.value
    if order >= 4:
        dGam = Gamma.gradient()
        out.dGamma_dx, out.dGamma_dy = dGam[..., :n], dGam[..., n:]
    return out


def spray_coefficients(spec: ManifoldSpec, x, y) -> np.ndarray:
    """G^i(x, y), positively 2-homogeneous in y."""
    return evaluate_connection(spec, x, y, order=2).G


def nonlinear_connection(spec: ManifoldSpec, x, y) -> np.ndarray:
    """N^i_j = dG^i/dy^j, indexed [..., i, j]."""
    return evaluate_connection(spec, x, y, order=3).N


def chern_coefficients(spec: ManifoldSpec, x, y) -> np.ndarray:
    """Gamma^i_jk(x, y), indexed [..., i, j, k]; symmetric in (j, k)."""
    return evaluate_connection(spec, x, y, order=3).Gamma


def riemann_curvature(spec: ManifoldSpec, x, y) -> np.ndarray:
    """R_j^i_km(x, y), indexed [..., j, i, k, m]."""
    return evaluate_connection(spec, x, y, order=4).R


def landsberg_P(spec: ManifoldSpec, x, y) -> np.ndarray:
    """P_k^i_jl = dGamma^i_kj/dy^l, indexed [..., k, i, j, l]."""
    return evaluate_connection(spec, x, y, order=4).P


# --- covariant derivatives of vector fields on M ----------------------------
def field_derivatives(V, x, order: int = 2):
    """Value, Jacobian [..., i, j] = dV^i/dx^j and (order 2) second derivatives [..., i, j, k]."""
    t = V.taylor(np.asarray(x, dtype=float), order)
    val = t.value
    jac = t.gradient()
    hess = t.hessian() if order >= 2 else None
    return val, jac, hess


def _first_cov(Vv, DV, Gamma):
    return DV + np.einsum("...m,...imj->...ij", Vv, Gamma)


def horizontal_covariant_vector(spec: ManifoldSpec, V, x, y, conn: ConnectionEval | None = None) -> np.ndarray:
    """V^i_{|j} = dV^i/dx^j + V^m Gamma^i_mj, indexed [..., i, j]."""
    conn = conn or evaluate_connection(spec, x, y, order=3)
    Vv, DV, _ = field_derivatives(V, conn.x, order=1)
    return _first_cov(Vv, DV, conn.Gamma)


def second_horizontal_covariant(spec: ManifoldSpec, V, x, y, conn: ConnectionEval | None = None) -> np.ndarray:
    """V^i_{|j|k}, indexed [..., i, j, k].

    delta(V^i_{|j})/delta x^k + V^m_{|j} Gamma^i_mk - V^i_{|m} Gamma^m_jk, where the
    first term acts through the y-dependence of Gamma as well.
    """
    conn = conn if conn is not None and conn.dGamma_dx is not None else evaluate_connection(spec, x, y, order=4)
    Vv, DV, D2V = field_derivatives(V, conn.x, order=2)
    Gam = conn.Gamma
    V1 = _first_cov(Vv, DV, Gam)
    delta_V1 = (D2V
                + np.einsum("...mk,...imj->...ijk", DV, Gam)
                + np.einsum("...m,...imjk->...ijk", Vv, conn.delta_Gamma))
    return (delta_V1
            + np.einsum("...mj,...imk->...ijk", V1, Gam)
            - np.einsum("...im,...mjk->...ijk", V1, Gam))
