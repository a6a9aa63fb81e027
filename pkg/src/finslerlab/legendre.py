"""Dual metric, Legendre transform and its inverse, dual fundamental tensor.

Riemannian and Randers metrics have closed forms.  A Randers metric
F = alpha + beta has a Randers dual F* = alpha* + beta* with

    a*^ij = ((1 - b^2) a^ij + b^i b^j) / (1 - b^2)^2,    b*^i = -b^i / (1 - b^2),

where b^i = a^ij b_j and b = ||beta||_alpha.  Generic metrics invert the
Legendre map numerically: the solution y of g_ij(x, y) y^j = xi_i is the
unique minimizer of the strictly convex function phi(y) = F^2/2 - xi(y), whose
gradient is the Legendre residual and whose Hessian is g.  Damped Newton on
phi converges globally.

Every function takes batched arrays of shape ``batch + (n,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConvergenceFailure, DegenerateInput, FamilyMismatch, FinslerError,
                     StrongConvexityViolated)
from .metric import ManifoldSpec, _fundamental, _norm, _y_jets, coefficients
from .taylor import jet_space, seed

__all__ = [
    "CotangentSample", "RandersDualData", "dual_norm", "legendre", "legendre_inverse",
    "dual_fundamental_tensor", "randers_dual_data", "newton_legendre_inverse",
]

MAX_NEWTON = 50
RETRIES = 8


@dataclass(frozen=True)
class CotangentSample:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))


@dataclass(frozen=True)
class RandersDualData:
    """a*^ij, b*^i and b = ||beta||_alpha at a point (batched arrays allowed)."""

    astar: np.ndarray
    bstar: np.ndarray
    b: np.ndarray

    @property
    def bstar_norm(self) -> np.ndarray:
        """||beta*||_{alpha*}, computed with the inverse of a*."""
        low = np.linalg.solve(self.astar, self.bstar[..., None])[..., 0]
        return np.sqrt(np.einsum("...i,...i->...", self.bstar, low))


def _arrays(x, v):
    x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
    return x, v


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def _zero_rows(v):
    return np.all(v == 0, axis=-1)


# --- Randers dual data -----------------------------------------------------
def _dual_data(a, b) -> RandersDualData:
    ainv = np.linalg.inv(a)
    bup = np.einsum("...ij,...j->...i", ainv, b)
    b2 = np.einsum("...i,...i->...", bup, b)
    s = 1.0 - b2
    astar = (s[..., None, None] * ainv + bup[..., :, None] * bup[..., None, :]) / (s * s)[..., None, None]
    bstar = -bup / s[..., None]
    return RandersDualData(astar, bstar, np.sqrt(b2))


def randers_dual_data(spec: ManifoldSpec, x) -> RandersDualData:
    if spec.family != "randers":
        raise FamilyMismatch(f"randers dual data needs a randers spec, got '{spec.family}'")
    a, b = coefficients(spec, np.asarray(x, dtype=float))
    data = _dual_data(a, b)
    if np.any(~(data.b < 1.0)):
        raise StrongConvexityViolated("‖β‖_α ≥ 1: the Randers metric is not strongly convex here")
    return data


def _randers_g(a, b, y):
    """Fundamental tensor of alpha + beta for coefficient arrays (a, b)."""
    alpha = np.sqrt(np.einsum("...ij,...i,...j->...", a, y, y))
    ahat = np.einsum("...ij,...j->...i", a, y) / alpha[..., None]
    F = alpha + np.einsum("...i,...i->...", b, y)
    h = a - ahat[..., :, None] * ahat[..., None, :]
    ell = ahat + b
    return (F / alpha)[..., None, None] * h + ell[..., :, None] * ell[..., None, :]


def _randers_map(a, b, y):
    """y -> F (a y / alpha + b): the Legendre map of alpha + beta; works for the dual too."""
    ay = np.einsum("...ij,...j->...i", a, y)
    alpha = np.sqrt(np.einsum("...i,...i->...", ay, y))
    F = alpha + np.einsum("...i,...i->...", b, y)
    safe = np.where(alpha > 0, alpha, 1.0)
    out = F[..., None] * (ay / safe[..., None] + b)
    return np.where((alpha > 0)[..., None], out, 0.0)


# --- Newton inversion (generic path) ----------------------------------------
def _phi_parts(spec, x, y, order=2):
    jet = _y_jets(spec, x, y, order)
    return 0.5 * jet.value, 0.5 * jet.gradient(), (0.5 * jet.hessian() if order >= 2 else None)


def _newton(spec, x, xi, y0, tol):
    """Damped Newton with Armijo backtracking on phi(y) = F^2/2 - xi.y, batched."""
    y = y0.copy()
    phi, grad, hess = _phi_parts(spec, x, y)
    r = grad - xi
    res = np.max(np.abs(r), axis=-1)
    done = res <= tol
    for _ in range(MAX_NEWTON):
        if np.all(done):
            break
        act = ~done
        xa, ya, ra, xia = x[act], y[act], r[act], xi[act]
        f0 = phi[act] - np.einsum("...i,...i->...", xia, ya)
        step = -np.linalg.solve(hess[act], ra[..., None])[..., 0]
        slope = np.einsum("...i,...i->...", ra, step)
        t = np.ones(len(ya))
        accepted = np.zeros(len(ya), dtype=bool)
        ynew = ya.copy()
        for _ls in range(40):
            trial = ya + t[:, None] * step
            with np.errstate(all="ignore"):
                try:
                    ftr = 0.5 * _norm(spec, xa, trial) ** 2 - np.einsum("...i,...i->...", xia, trial)
                except FinslerError:
                    ftr = np.full(len(ya), np.inf)
            ok = (~accepted) & np.isfinite(ftr) & (ftr <= f0 + 1e-4 * t * slope + 1e-15 * np.abs(f0))
            ynew[ok] = trial[ok]
            accepted |= ok
            if np.all(accepted):
                break
            t = np.where(accepted, t, 0.5 * t)
        # a rejected step near the optimum is round-off dominated; take the full step
        ynew[~accepted] = ya[~accepted] + step[~accepted]
        y[act] = ynew
        phi_a, grad_a, hess_a = _phi_parts(spec, xa, ynew)
        phi[act], grad[act], hess[act] = phi_a, grad_a, hess_a
        r[act] = grad_a - xia
        res[act] = np.max(np.abs(r[act]), axis=-1)
        done = res <= tol
    return y, res, done


def _initial_guess(spec, x, xi):
    if spec.family == "generic":
        ya = xi.copy()  # coordinate raise
    else:
        a, _ = coefficients(spec, x)
        ya = np.linalg.solve(a, xi[..., None])[..., 0]
    g = _fundamental(spec, x, ya)
    return np.linalg.solve(g, xi[..., None])[..., 0]


def newton_legendre_inverse(spec: ManifoldSpec, x, xi, seed_value: int = 0) -> np.ndarray:
    """Solve g_ij(x, y) y^j = xi_i by Newton's method (any family)."""
    x, xi = _arrays(x, xi)
    shape = xi.shape
    x2, xi2 = x.reshape(-1, shape[-1]), xi.reshape(-1, shape[-1])
    out = np.zeros_like(xi2)
    nz = ~_zero_rows(xi2)
    if np.any(nz):
        xa, xia = x2[nz], xi2[nz]
        tol = 1e-12 * (1.0 + np.max(np.abs(xia), axis=-1))
        y, res, done = _newton(spec, xa, xia, _initial_guess(spec, xa, xia), tol)
        rng = np.random.default_rng(seed_value)
        for _ in range(RETRIES):
            if np.all(done):
                break
            bad = ~done
            start = rng.standard_normal((int(bad.sum()), shape[-1]))
            start /= np.linalg.norm(start, axis=-1, keepdims=True)
            start *= np.linalg.norm(xia[bad], axis=-1, keepdims=True)
            yb, rb, db = _newton(spec, xa[bad], xia[bad], start, tol[bad])
            better = db | (rb < res[bad])
            idx = np.flatnonzero(bad)[better]
            y[idx], res[idx], done[idx] = yb[better], rb[better], db[better]
        if not np.all(done):
            raise ConvergenceFailure("Legendre inverse Newton iteration did not converge",
                                     float(np.max(res[~done])))
        # one more Newton step inside the quadratic basin, kept where it helps
        _phi, grad, hess = _phi_parts(spec, xa, y)
        y2 = y - np.linalg.solve(hess, (grad - xia)[..., None])[..., 0]
        res2 = np.max(np.abs(_phi_parts(spec, xa, y2, order=1)[1] - xia), axis=-1)
        keep = res2 < res
        y[keep] = y2[keep]
        out[nz] = y
    return out.reshape(shape)


# --- public operations -------------------------------------------------------
def legendre(spec: ManifoldSpec, x, y) -> np.ndarray:
    """xi_i = g_ij(x, y) y^j, and 0 for y = 0."""
    x, y = _arrays(x, y)
    if spec.family == "riemannian":
        a, _ = coefficients(spec, x)
        return np.einsum("...ij,...j->...i", a, y)
    if spec.family == "randers":
        a, b = coefficients(spec, x)
        return _randers_map(a, b, y)
    out = np.zeros_like(y)
    nz = ~_zero_rows(y)
    if np.any(nz):
        out[nz] = _phi_parts(spec, x[nz], y[nz], order=1)[1]
    return out


def legendre_inverse(spec: ManifoldSpec, x, xi, method: str = "auto") -> np.ndarray:
    """The unique y with g_ij(x, y) y^j = xi_i (0 for xi = 0).

    ``method="newton"`` forces the numerical path for any family.
    """
    x, xi = _arrays(x, xi)
    if method == "newton" or spec.family == "generic":
        return newton_legendre_inverse(spec, x, xi)
    a, b = coefficients(spec, x)
    if spec.family == "riemannian":
        return np.linalg.solve(a, xi[..., None])[..., 0]
    d = _dual_data(a, b)
    return _randers_map(d.astar, d.bstar, xi)


def dual_norm(spec: ManifoldSpec, x, xi, method: str = "auto"):
    """F*(x, xi) = sup_y xi(y) / F(x, y); 0 for xi = 0."""
    x, xi = _arrays(x, xi)
    if method == "newton" or spec.family == "generic":
        return _scalar(_generic_dual_norm(spec, x, xi))
    a, b = coefficients(spec, x)
    if spec.family == "riemannian":
        return _scalar(np.sqrt(np.einsum("...i,...i->...", np.linalg.solve(a, xi[..., None])[..., 0], xi)))
    d = _dual_data(a, b)
    alpha = np.sqrt(np.einsum("...ij,...i,...j->...", d.astar, xi, xi))
    return _scalar(alpha + np.einsum("...i,...i->...", d.bstar, xi))


def _generic_dual_norm(spec, x, xi, iters: int = 20, tol: float = 1e-9):
    """Maximize xi(y)/F(y) over directions, starting from the Newton solution."""
    y = newton_legendre_inverse(spec, x, xi)
    out = np.zeros(xi.shape[:-1])
    nz = ~_zero_rows(xi)
    if not np.any(nz):
        return out
    xa, xia, ya = x[nz], xi[nz], y[nz]

    def ratio(v):
        return np.einsum("...i,...i->...", xia, v) / _norm(spec, xa, v)

    val = ratio(ya)
    for _ in range(iters):
        F2, dF2, _h = _phi_parts(spec, xa, ya, order=1)
        F = np.sqrt(2.0 * F2)
        dF = dF2 / F[..., None]  # dF/dy
        grad = xia / F[..., None] - (val / F)[..., None] * dF
        # project out the radial direction (the ratio is 0-homogeneous)
        grad -= (np.einsum("...i,...i->...", grad, ya) / np.einsum("...i,...i->...", ya, ya))[..., None] * ya
        gnorm = np.linalg.norm(grad, axis=-1)
        if np.all(gnorm * np.linalg.norm(ya, axis=-1) <= tol * np.abs(val)):
            break
        t = np.linalg.norm(ya, axis=-1) ** 2 / np.maximum(np.abs(val), 1e-300)
        for _ls in range(30):
            trial = ya + t[:, None] * grad
            tv = ratio(trial)
            up = tv > val
            ya = np.where(up[:, None], trial, ya)
            val = np.where(up, tv, val)
            t = np.where(up, 0.0, 0.5 * t)
            if np.all(t == 0):
                break
    out[nz] = val
    return out


def dual_fundamental_tensor(spec: ManifoldSpec, x, xi, method: str = "auto") -> np.ndarray:
    """g*^kl(x, xi) = 1/2 d^2 F*^2 / dxi_k dxi_l.

    ``auto``: closed form (Randers dual formula, or a^-1), or the inverse of g at
    the Legendre preimage for generic metrics.  ``inverse``: always the latter.
    ``ad``: jets of F*^2 in xi through the closed form (riemannian/randers only).
    """
    x, xi = _arrays(x, xi)
    if np.any(_zero_rows(xi)):
        raise DegenerateInput("covector xi must be nonzero")
    if method == "inverse" or spec.family == "generic":
        y = legendre_inverse(spec, x, xi)
        return np.linalg.inv(_fundamental(spec, x, y))
    a, b = coefficients(spec, x)
    if spec.family == "riemannian":
        g = np.linalg.inv(a)
        if method != "ad":
            return np.broadcast_to(g, xi.shape + xi.shape[-1:]).copy()
        return _dual_ad(g, np.zeros_like(xi), xi)
    d = _dual_data(a, b)
    if method == "ad":
        return _dual_ad(d.astar, d.bstar, xi)
    return _randers_g(d.astar, d.bstar, xi)


def _dual_ad(astar, bstar, xi):
    n = xi.shape[-1]
    space = jet_space(n, 2)
    X = seed(xi, space)
    quad = sum(astar[..., i, j] * X[i] * X[j] for i in range(n) for j in range(n))
    Fs = quad.sqrt() + sum(bstar[..., i] * X[i] for i in range(n))
    return 0.5 * (Fs * Fs).hessian()
