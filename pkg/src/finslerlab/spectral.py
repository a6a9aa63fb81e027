"""First eigenvalue of the Finsler Laplacian on periodic 1D/2D grids.

Discretization
--------------
Node ``i`` sits at ``x_i = i h``.  For every axis ``d`` there is one face
between node ``i`` and node ``i + e_d``.  At that face the covector of a grid
function ``u`` has normal component ``(u[i + e_d] - u[i]) / h_d`` and (in 2D)
a transverse component equal to the mean of the centered differences at the
two adjacent nodes.  The discrete energy numerator is

    E(u) = (1 / dim) sum_d sum_faces F*(x_f, du_f)^2 sigma(x_f) |cell|

(each axis family of faces approximates the whole integral), and the discrete
Laplacian is defined variationally,

    (Delta_h u)_i = -(1 / (2 sigma_i |cell|)) dE/du_i,

which in 1D is exactly the flux difference (sigma Y)_{i+1/2} - (sigma Y)_{i-1/2}
over sigma_i h, with Y = g*(du) du the Legendre preimage of the face covector.
Because Delta_h is a derivative of a sum over faces, the weak identity
sum phi Delta_h u sigma |cell| = -sum dphi(grad u) sigma |cell| holds exactly
and the discrete divergence theorem telescopes.

Faces whose covector vanishes contribute zero flux (grad u = 0 there).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from .errors import InputError, NotConverged, ZeroFunction
from .expr import VectorField
from .legendre import _dual_data, _initial_guess, _newton, _randers_map, newton_legendre_inverse
from .metric import ManifoldSpec, coefficients, measure_density

__all__ = ["GridContext", "EigenResult", "energy", "apply_laplacian", "weak_pairing",
           "minimize_rayleigh", "mean_minimizer_check", "divergence_theorem_check", "MIN_RESOLUTION"]

MIN_RESOLUTION = 8


class _FaceMetric:
    """Legendre inverse xi -> Y at a fixed set of face points."""

    def __init__(self, spec: ManifoldSpec, x: np.ndarray):
        self.spec = spec
        self.x = x
        self.prev: np.ndarray | None = None
        if spec.family == "riemannian":
            a, _ = coefficients(spec, x)
            self.ainv = np.linalg.inv(a)
        elif spec.family == "randers":
            a, b = coefficients(spec, x)
            d = _dual_data(a, b)
            self.astar, self.bstar = d.astar, d.bstar

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        fam = self.spec.family
        if fam == "riemannian":
            return np.einsum("...ij,...j->...i", self.ainv, xi)
        if fam == "randers":
            return _randers_map(self.astar, self.bstar, xi)
        return self._generic(xi)

    def _generic(self, xi):
        shape = xi.shape
        x2, xi2 = self.x.reshape(-1, shape[-1]), xi.reshape(-1, shape[-1])
        out = np.zeros_like(xi2)
        nz = ~np.all(xi2 == 0, axis=-1)
        if np.any(nz):
            xa, xia = x2[nz], xi2[nz]
            y0 = None
            if self.prev is not None:
                p = self.prev.reshape(-1, shape[-1])[nz]
                if np.all(np.any(p != 0, axis=-1)):
                    y0 = p
            if y0 is None:
                y0 = _initial_guess(self.spec, xa, xia)
            tol = 1e-12 * (1.0 + np.max(np.abs(xia), axis=-1))
            y, _res, done = _newton(self.spec, xa, xia, y0, tol)
            if not np.all(done):
                y[~done] = newton_legendre_inverse(self.spec, xa[~done], xia[~done])
            out[nz] = y
        out = out.reshape(shape)
        self.prev = out
        return out


@dataclass
class GridContext:
    """Periodic grid with node coordinates, measure weights and face metrics."""

    spec: ManifoldSpec
    resolution: tuple[int, ...]
    periods: tuple[float, ...]
    nodes: np.ndarray = field(init=False, repr=False)  # shape N + (dim,)
    sigma: np.ndarray = field(init=False, repr=False)  # shape N
    cell: float = field(init=False)
    _faces: list = field(init=False, repr=False)

    def __post_init__(self):
        dim = len(self.resolution)
        if dim not in (1, 2):
            raise InputError("grids must be one- or two-dimensional")
        if dim != self.spec.dimension:
            raise InputError(f"grid dimension {dim} does not match the manifold dimension {self.spec.dimension}")
        if len(self.periods) != dim:
            raise InputError("one period per axis is required")
        for N in self.resolution:
            if N < MIN_RESOLUTION:
                raise InputError(f"grid resolution must be at least {MIN_RESOLUTION}, got {N}")
        for L in self.periods:
            if not L > 0:
                raise InputError("periods must be positive")
        self.resolution = tuple(int(n) for n in self.resolution)
        self.periods = tuple(float(p) for p in self.periods)
        axes = [np.arange(N) * (L / N) for N, L in zip(self.resolution, self.periods)]
        self.nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        self.cell = float(np.prod(self.h))
        self.sigma = np.asarray(measure_density(self.spec, self.nodes), dtype=float) * np.ones(self.resolution)
        if not np.all(self.sigma > 0):
            raise InputError("measure density must be positive on the grid")
        self._faces = []
        for d in range(self.dim):
            xf = self.nodes.copy()
            xf[..., d] += 0.5 * self.h[d]
            sf = np.asarray(measure_density(self.spec, xf), dtype=float) * np.ones(self.resolution)
            self._faces.append((xf, sf, _FaceMetric(self.spec, xf)))

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def h(self) -> np.ndarray:
        return np.array([L / N for N, L in zip(self.resolution, self.periods)])

    @property
    def weights(self) -> np.ndarray:
        """sigma(x_i) |cell| per node."""
        return self.sigma * self.cell

    @property
    def total_measure(self) -> float:
        return float(self.weights.sum())

    # --- face covectors and their adjoints -------------------------------
    def face_covector(self, u: np.ndarray, d: int) -> np.ndarray:
        h = self.h
        comps = []
        for e in range(self.dim):
            if e == d:
                comps.append((np.roll(u, -1, axis=d) - u) / h[d])
            else:
                c = (np.roll(u, -1, axis=e) - np.roll(u, 1, axis=e)) / (2.0 * h[e])
                comps.append(0.5 * (c + np.roll(c, -1, axis=d)))
        return np.stack(comps, axis=-1)

    def face_covector_adjoint(self, w: np.ndarray, d: int) -> np.ndarray:
        """Transpose of ``face_covector`` (w has a trailing component axis)."""
        h = self.h
        out = np.zeros(self.resolution)
        for e in range(self.dim):
            we = w[..., e]
            if e == d:
                out += (np.roll(we, 1, axis=d) - we) / h[d]
            else:
                s = 0.5 * (we + np.roll(we, 1, axis=d))
                out += (np.roll(s, 1, axis=e) - np.roll(s, -1, axis=e)) / (2.0 * h[e])
        return out

    def mean(self, u: np.ndarray) -> float:
        return float((u * self.weights).sum() / self.total_measure)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float((u * v * self.weights).sum())

    def project(self, u: np.ndarray) -> np.ndarray:
        return u - self.mean(u)

    def evaluate(self, u: np.ndarray):
        """(energy numerator, Delta_h u) in one pass over the faces."""
        u = np.asarray(u, dtype=float).reshape(self.resolution)
        num = 0.0
        acc = np.zeros(self.resolution)
        for d, (_xf, sf, metric) in enumerate(self._faces):
            xi = self.face_covector(u, d)
            Y = metric(xi)
            num += float((np.einsum("...i,...i->...", xi, Y) * sf).sum()) * self.cell / self.dim
            acc += self.face_covector_adjoint(Y * sf[..., None], d)
        lap = -acc / (self.dim * self.sigma)
        return num, lap


def energy(ctx: GridContext, u) -> float:
    """Rayleigh quotient of the zero-mean projection of u."""
    u = ctx.project(np.asarray(u, dtype=float).reshape(ctx.resolution))
    den = ctx.inner(u, u)
    if not den > 0:
        raise ZeroFunction("energy is undefined for a constant (zero after projection) function")
    return ctx.evaluate(u)[0] / den


def apply_laplacian(ctx: GridContext, u) -> np.ndarray:
    return ctx.evaluate(u)[1]


def weak_pairing(ctx: GridContext, phi, u) -> tuple[float, float]:
    """(sum phi Delta_h u sigma |cell|, -sum dphi(grad u) sigma |cell|); equal by construction."""
    phi = np.asarray(phi, dtype=float).reshape(ctx.resolution)
    lhs = ctx.inner(phi, apply_laplacian(ctx, u))
    rhs = 0.0
    for d, (_xf, sf, metric) in enumerate(ctx._faces):
        Y = metric(ctx.face_covector(np.asarray(u, dtype=float).reshape(ctx.resolution), d))
        dphi = ctx.face_covector(phi, d)
        rhs -= float((np.einsum("...i,...i->...", dphi, Y) * sf).sum()) * ctx.cell / ctx.dim
    return lhs, rhs


# --- eigen solver ----------------------------------------------------------------
@dataclass
class EigenResult:
    lambda1: float
    u: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged}


def _initial(ctx: GridContext, rng: np.random.Generator) -> np.ndarray:
    d = int(np.argmax(ctx.periods))
    u = np.cos(2.0 * np.pi * ctx.nodes[..., d] / ctx.periods[d])
    return u + 0.01 * rng.standard_normal(ctx.resolution)


def minimize_rayleigh(ctx: GridContext, max_iters: int = 50000, tol: float = 1e-8, seed: int = 0,
                      energy_tol: float | None = None, trace: str | None = None,
                      raise_on_failure: bool = True) -> EigenResult:
    """Projected gradient descent for lambda_1 on the zero-mean unit sphere.

    Step lengths are Barzilai-Borwein with a nonmonotone Armijo backtracking
    (c = 1e-4, halving).  The iteration stops when the relative eigen-residual
    ||Delta_h u + E(u) u|| / ||u|| <= tol; ``energy_tol`` optionally also stops on
    the relative energy change.  The best iterate is returned (or carried by
    :class:`NotConverged`).
    """
    rng = np.random.default_rng(seed)

    def normalize(v):
        v = ctx.project(v)
        return v / np.sqrt(ctx.inner(v, v))

    def state(v):
        num, lap = ctx.evaluate(v)
        r = lap + num * v
        r = r - ctx.mean(r)
        return num, -2.0 * r, np.sqrt(ctx.inner(r, r))

    u = normalize(_initial(ctx, rng))
    E, g, res = state(u)
    history = [(0, E, res, 0.0)]
    best = (res, E, u, 0)
    step = 1.0 / max(1.0, 4.0 * float(np.sum(1.0 / ctx.h ** 2)))
    recent = [E]
    converged = res <= tol
    it = 0
    while not converged and it < max_iters:
        it += 1
        gg = ctx.inner(g, g)
        ref = max(recent[-10:])
        t = step
        for _ls in range(60):
            un = normalize(u - t * g)
            En, gn, rn = state(un)
            if En <= ref - 1e-4 * t * gg:
                break
            t *= 0.5
        s = un - u
        yk = gn - g
        sy = ctx.inner(s, yk)
        step = ctx.inner(s, s) / sy if sy > 0 else 2.0 * t
        dE = abs(E - En) / max(abs(E), 1e-300)
        u, E, g, res = un, En, gn, rn
        recent.append(E)
        history.append((it, E, res, t))
        if res < best[0]:
            best = (res, E, u, it)
        converged = res <= tol or (energy_tol is not None and dE < energy_tol)
    if trace:
        with open(trace, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "energy", "residual", "step"])
            for row in history:
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])
    if converged:
        result = EigenResult(float(E), u, it, float(res), True, history)
    else:
        res_b, E_b, u_b, _it = best
        result = EigenResult(float(E_b), u_b, it, float(res_b), False, history)
        if raise_on_failure:
            raise NotConverged(f"eigen-residual {res_b:.3e} above tolerance {tol:.1e} after {it} iterations",
                               result)
    return result


def write_eigenfunction(ctx: GridContext, u: np.ndarray, path: str) -> None:
    """CSV with node coordinates and u."""
    names = [f"x{i + 1}" for i in range(ctx.dim)] + ["u"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for idx in np.ndindex(*ctx.resolution):
            w.writerow([repr(float(c)) for c in ctx.nodes[idx]] + [repr(float(u[idx]))])


# --- checks -------------------------------------------------------------------------
def mean_minimizer_check(ctx: GridContext, u, digits: int = 50) -> dict:
    """Minimize q(lam) = sum (u - lam)^2 sigma |cell| by golden section and compare with the mean.

    The search runs in multiprecision arithmetic so that its resolution is far
    below double rounding.
    """
    u = np.asarray(u, dtype=float).reshape(ctx.resolution)
    w = ctx.weights
    with mpmath.workdps(digits):
        uu = [mpmath.mpf(float(v)) for v in u.ravel()]
        ww = [mpmath.mpf(float(v)) for v in w.ravel()]
        S0 = mpmath.fsum(ww)
        S1 = mpmath.fsum(a * b for a, b in zip(uu, ww))
        S2 = mpmath.fsum(a * a * b for a, b in zip(uu, ww))

        def q(lam):
            return S2 - 2 * lam * S1 + lam * lam * S0

        lo, hi = mpmath.mpf(float(u.min())) - 1, mpmath.mpf(float(u.max())) + 1
        invphi = (mpmath.sqrt(5) - 1) / 2
        c, d = hi - invphi * (hi - lo), lo + invphi * (hi - lo)
        fc, fd = q(c), q(d)
        eps = mpmath.mpf(10) ** (-(digits * 2) // 3)
        while hi - lo > eps * (1 + abs(lo)):
            if fc < fd:
                hi, d, fd = d, c, fc
                c = hi - invphi * (hi - lo)
                fc = q(c)
            else:
                lo, c, fc = c, d, fd
                d = lo + invphi * (hi - lo)
                fd = q(d)
        lam = (lo + hi) / 2
        inf_value = q(lam)
    mean = ctx.mean(u)
    at_mean = float(((u - mean) ** 2 * w).sum())
    return {"minimizer": float(lam), "mean": mean, "inf_value": float(inf_value),
            "value_at_mean": at_mean}


def divergence_theorem_check(ctx: GridContext, X) -> dict:
    """Flux-form divergence of X on the grid and its total integral."""
    if isinstance(X, (list, tuple)):
        X = VectorField.parse(list(X), ctx.dim)
    div = np.zeros(ctx.resolution)
    for d, (xf, sf, _m) in enumerate(ctx._faces):
        flux = sf * np.asarray(X(xf), dtype=float)[..., d] * np.ones(ctx.resolution)
        div += (flux - np.roll(flux, 1, axis=d)) / ctx.h[d]
    div /= ctx.sigma
    total = float(abs((div * ctx.weights).sum()))
    scale = float((np.abs(div) * ctx.weights).sum())
    return {"integral": total, "scale": scale, "relative": total / scale if scale > 0 else 0.0}
