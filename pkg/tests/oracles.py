"""Independent reference computations used by the tests.

Nothing here calls into the library's derivative machinery: the oracles use
sympy, finite differences or an explicit flow integration.
"""

from __future__ import annotations

import functools

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from finslerlab.metric import ManifoldSpec

# --- fixtures ---------------------------------------------------------------------
SPHERE_A = "4/(1+x1^2+x2^2)^2"
CURVED_A = [["1+0.2*x2^2", "0.1*x1"], ["0.1*x1", "1"]]
CURVED_B = ["0.3*sin(x2)", "0.2*cos(x1)"]
CONVEX_F = ("sqrt((1+0.2*sin(x1))*sqrt(y1^4+y2^4) + (1+0.1*x2^2)*(y1^2+y2^2) + 0.3*x1*y1*y2)"
            " + 0.2*cos(x2)*y1")
NONCONVEX_F = "sqrt(y1^2+y2^2+(y1^4+y2^4)/(y1^2+y2^2)*(1+0.3*sin(x1)))"
WARPED_A = [["1+0.3*sin(x2)^2", "0.2*sin(x1)*cos(x2)"], ["0.2*sin(x1)*cos(x2)", "exp(0.2*x1)"]]


def euclidean():
    return ManifoldSpec.euclidean(2)


def sphere():
    return ManifoldSpec.riemannian([[SPHERE_A, "0"], ["0", SPHERE_A]])


def warped():
    return ManifoldSpec.riemannian(WARPED_A, measure="exp(0.1*x2)")


def randers_half():
    return ManifoldSpec.randers([["1", "0"], ["0", "1"]], ["1/2", "0"])


def randers_curved():
    return ManifoldSpec.randers(CURVED_A, CURVED_B, measure="exp(0.1*x1)")


def generic_convex():
    return ManifoldSpec.generic(CONVEX_F, 2, measure="exp(0.2*x2)")


def generic_nonconvex():
    return ManifoldSpec.generic(NONCONVEX_F, 2)


def circle(measure="1"):
    return ManifoldSpec.riemannian([["1"]], measure=measure)


# --- random expression corpus ---------------------------------------------------
_UNARY = ("sin", "cos", "exp", "log", "sqrt", "tanh")


def random_expression(rng: np.random.Generator, n: int, depth: int) -> str:
    """Random infix expression in x1..xn with nesting depth at most ``depth``.

    Arguments of log/sqrt and denominators are shifted to stay away from the
    singular set; points are additionally screened by the caller.
    """
    if depth <= 1 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return f"x{int(rng.integers(1, n + 1))}"
        return repr(round(float(rng.uniform(-2, 2)), 3))
    kind = rng.random()
    sub = functools.partial(random_expression, rng, n)
    if kind < 0.35:
        op = rng.choice(["+", "-", "*"])
        return f"({sub(depth - 1)} {op} {sub(depth - 1)})"
    if kind < 0.45:
        return f"({sub(depth - 1)})/(1.5 + ({sub(depth - 2)})^2)"
    if kind < 0.55:
        return f"({sub(depth - 1)})^{int(rng.integers(2, 4))}"
    if kind < 0.6:
        return f"exp(0.3*{sub(depth - 2)})^0.7"
    if kind < 0.65:
        return f"-{sub(depth - 1)}"
    fn = _UNARY[int(rng.integers(len(_UNARY)))]
    if fn in ("log", "sqrt"):
        return f"{fn}(1 + ({sub(depth - 2)})^2)"
    if fn == "exp":
        return f"exp(0.5*sin({sub(depth - 2)}))"
    return f"{fn}({sub(depth - 1)})"


@functools.lru_cache(maxsize=None)
def corpus(count: int = 200, depth: int = 6, n: int = 3, seed: int = 12345) -> tuple[str, ...]:
    rng = np.random.default_rng(seed)
    return tuple(random_expression(rng, n, depth) for _ in range(count))


def fd_first(fun, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def fd_second(fun, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            out[i, j] = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)) / (4 * h * h)
    return out


# --- sympy Riemannian oracles -----------------------------------------------------
_TRANSFORMS = standard_transformations + (convert_xor,)


def sym(src: str, n: int):
    names = {f"x{i + 1}": sp.Symbol(f"x{i + 1}") for i in range(n)}
    return parse_expr(src, local_dict=names, transformations=_TRANSFORMS)


class RiemannOracle:
    """Levi-Civita quantities of a_ij(x) computed symbolically by sympy."""

    def __init__(self, a: list[list[str]]):
        n = len(a)
        self.n = n
        self.X = sp.symbols(f"x1:{n + 1}")
        A = sp.Matrix(n, n, lambda i, j: sym(a[i][j], n))
        Ai = sp.simplify(A.inv()) if n <= 2 else A.inv()
        self.A, self.Ai = A, Ai
        G = [[[sum(Ai[i, l] * (sp.diff(A[l, j], self.X[k]) + sp.diff(A[l, k], self.X[j])
                               - sp.diff(A[j, k], self.X[l])) for l in range(n)) / 2
               for k in range(n)] for j in range(n)] for i in range(n)]
        self.Gamma = G
        self._gamma = sp.lambdify(self.X, G, "numpy")
        # R^i_jkl = d_k Gamma^i_lj - d_l Gamma^i_kj + Gamma^i_km Gamma^m_lj - Gamma^i_lm Gamma^m_kj
        R = [[[[sp.diff(G[i][l][j], self.X[k]) - sp.diff(G[i][k][j], self.X[l])
                + sum(G[i][k][m] * G[m][l][j] - G[i][l][m] * G[m][k][j] for m in range(n))
                for l in range(n)] for k in range(n)] for j in range(n)] for i in range(n)]
        self._R = sp.lambdify(self.X, R, "numpy")
        self._A = sp.lambdify(self.X, A, "numpy")

    def christoffel(self, x):
        return np.array(self._gamma(*x), dtype=float)

    def riemann(self, x):
        """R[i, j, k, l] = R^i_{jkl} in the classical convention."""
        return np.array(self._R(*x), dtype=float)

    def metric(self, x):
        return np.array(self._A(*x), dtype=float)

    def sectional(self, x):
        """Gaussian curvature of a 2D metric."""
        R = self.riemann(x)
        a = self.metric(x)
        Rlow = np.einsum("im,mjkl->ijkl", a, R)
        return Rlow[0, 1, 0, 1] / np.linalg.det(a)

    def covariant_vector(self, V: list[str], x):
        """nabla_j V^i as [i, j]."""
        n = self.n
        Vs = [sym(v, n) for v in V]
        J = [[sp.diff(Vs[i], self.X[j]) + sum(Vs[m] * self.Gamma[i][m][j] for m in range(n))
              for j in range(n)] for i in range(n)]
        return J, np.array(sp.lambdify(self.X, J, "numpy")(*x), dtype=float)

    def covariant_vector_second(self, V: list[str], x):
        """nabla_k nabla_j V^i as [i, j, k]."""
        n = self.n
        J, _ = self.covariant_vector(V, x)
        H = [[[sp.diff(J[i][j], self.X[k]) + sum(J[m][j] * self.Gamma[i][m][k] for m in range(n))
               - sum(J[i][m] * self.Gamma[m][j][k] for m in range(n))
               for k in range(n)] for j in range(n)] for i in range(n)]
        return np.array(sp.lambdify(self.X, H, "numpy")(*x), dtype=float)

    def hessian(self, u: str, x):
        n = self.n
        us = sym(u, n)
        H = [[sp.diff(us, self.X[i], self.X[j]) - sum(sp.diff(us, self.X[m]) * self.Gamma[m][i][j]
                                                       for m in range(n))
              for j in range(n)] for i in range(n)]
        return np.array(sp.lambdify(self.X, H, "numpy")(*x), dtype=float)


# --- flow oracle for the Lie derivative of g --------------------------------------
def _rk4(fun, state, t, steps):
    dt = t / steps
    for _ in range(steps):
        k1 = fun(state)
        k2 = fun(state + 0.5 * dt * k1)
        k3 = fun(state + 0.5 * dt * k2)
        k4 = fun(state + dt * k3)
        state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


def lifted_flow(V, x, t, step=1e-3):
    """(phi_t(x), d phi_t) by RK4 on x' = V(x), J' = DV(x) J (Jacobian by central differences)."""
    n = len(x)

    def DV(p):
        return np.stack([fd_first(lambda q, i=i: V(q)[i], p, 1e-6) for i in range(n)])

    def rhs(s):
        p, J = s[:n], s[n:].reshape(n, n)
        return np.concatenate([V(p), (DV(p) @ J).ravel()])

    steps = max(1, int(np.ceil(abs(t) / step)))
    s = _rk4(rhs, np.concatenate([np.asarray(x, float), np.eye(n).ravel()]), t, steps)
    return s[:n], s[n:].reshape(n, n)


def lie_metric_flow(g, V, x, y, t=1e-4):
    """d/dt at 0 of the lifted-flow pull-back (Phi_t^* g)_ij, by central differences."""
    def pulled(tt):
        xt, J = lifted_flow(V, x, tt)
        return J.T @ g(xt, J @ y) @ J

    return (pulled(t) - pulled(-t)) / (2 * t)
