import numpy as np
import pytest

import oracles
from finslerlab import calculus as calc
from finslerlab.errors import DegenerateGradient, FamilyMismatch, UnsupportedVariance
from finslerlab.expr import ScalarField, VectorField
from finslerlab.taylor import stack
from finslerlab.metric import (ManifoldSpec, coefficients, finsler_norm, fundamental_tensor,
                               measure_density)

SPHERE = oracles.RiemannOracle([[oracles.SPHERE_A, "0"], ["0", oracles.SPHERE_A]])
U_TEST = "sin(x1) + x1*x2^2 + 0.5*cos(2*x2) + 2*x1"
V_TEST = ["x1*x2 + sin(x2)", "cos(x1) - x2^2"]
ROTATION = ["-x2", "x1"]
SPHERE_TILT = ["1 + x1^2 - x2^2", "2*x1*x2"]  # rotation about a horizontal axis, stereographic chart


def _pts(rng, count, r=0.8):
    return rng.uniform(-r, r, (count, 2)), rng.standard_normal((count, 2))


# --- gradient ----------------------------------------------------------------------
def test_randers_gradient_hand_values(randers_half):
    r = calc.gradient(randers_half, "x1", [0.0, 0.0])
    assert np.max(np.abs(r.grad - [4 / 9, 0])) <= 1e-12
    assert abs(r.F_grad - 2 / 3) <= 1e-12
    assert abs(r.A - 1) <= 1e-15 and abs(r.beta_dot - 0.5) <= 1e-15
    assert not r.critical
    lhs, rhs = calc.gradient_estimate(randers_half, "x1", [0.0, 0.0])
    assert abs(lhs - 2 / 3) <= 1e-12 and abs(rhs - 2) <= 1e-12


def test_gradient_simple_cases(euclidean):
    assert np.array_equal(calc.gradient(euclidean, "x1", [0.3, 0.2]).grad, [1, 0])
    r = calc.gradient(euclidean, "3", [0.3, 0.2])
    assert np.array_equal(r.grad, [0, 0]) and r.critical and r.F_grad == 0


def test_gradient_estimate_family_mismatch(euclidean):
    with pytest.raises(FamilyMismatch):
        calc.gradient_estimate(euclidean, "x1", [0, 0])


def test_gradient_estimate_equality_for_zero_b(rng):
    spec = ManifoldSpec.randers(oracles.WARPED_A, ["0", "0"])
    x = rng.uniform(-1, 1, (20, 2))
    lhs, rhs = calc.gradient_estimate(spec, U_TEST, x)
    assert np.max(np.abs(lhs - rhs)) <= 1e-14


def test_gradient_estimate_equality_when_antiparallel(rng):
    # df = -c * beta (alpha-dual) makes grad^alpha f anti-parallel to beta#
    for b1 in (0.2, 0.5, 0.9):
        spec = ManifoldSpec.randers(oracles.WARPED_A, [f"{b1}*(1+x2^2)/(1+x2^2)", "0.1*x1"])
        x = rng.uniform(-1, 1, (10, 2))
        for xx in x:
            _, b = coefficients(spec, xx)
            f = f"{float(-1.7 * b[0])!r}*x1 + {float(-1.7 * b[1])!r}*x2"
            lhs, rhs = calc.gradient_estimate(spec, f, xx)
            assert abs(lhs - rhs) <= 1e-9 * max(1, rhs)


@pytest.mark.parametrize("name", ["sphere", "randers_curved", "generic_convex"])
def test_gradient_duality_chain(name, rng):
    spec = getattr(oracles, name)()
    x = rng.uniform(-0.8, 0.8, (100, 2))
    r = calc.gradient(spec, U_TEST, x)
    dfg = np.einsum("ni,ni->n", r.df, r.grad)
    assert np.max(np.abs(dfg - r.F_grad ** 2) / dfg) <= 1e-9
    assert np.max(np.abs(r.F_grad - r.F_star_df) / r.F_star_df) <= 1e-9


def test_randers_formula_vs_legendre(randers_curved, rng):
    x = rng.uniform(-0.8, 0.8, (200, 2))
    a = calc.gradient(randers_curved, U_TEST, x).grad
    b = calc.gradient(randers_curved, U_TEST, x, method="legendre").grad
    assert np.max(np.abs(a - b)) <= 1e-9


# --- divergence and Laplacians ---------------------------------------------------------
def test_divergence_examples(euclidean):
    assert calc.divergence(euclidean, ["x1", "x2"], [0.4, -0.3]) == 2.0
    weighted = ManifoldSpec.riemannian([["1", "0"], ["0", "1"]], measure="exp(x1)")
    assert calc.divergence(weighted, ["1", "0"], [0.4, -0.3]) == 1.0


def test_divergence_matches_fd_and_leibniz(rng):
    spec = ManifoldSpec.riemannian([["1", "0"], ["0", "1"]], measure="exp(0.3*sin(x1) + 0.2*x2^2)")
    X = VectorField.parse(V_TEST, 2)
    phi = ScalarField.parse("cos(x1*x2) + x1", 2)
    x = rng.uniform(-1, 1, (50, 2))
    h = 1e-5
    fd = np.zeros(50)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd += (measure_density(spec, x + e) * X(x + e)[:, i] - measure_density(spec, x - e) * X(x - e)[:, i]) / (2 * h)
    fd /= measure_density(spec, x)
    assert np.max(np.abs(calc.divergence(spec, X, x) - fd)) <= 1e-6
    phiX = VectorField.parse([f"(cos(x1*x2) + x1)*({c})" for c in V_TEST], 2)
    rhs = phi(x) * calc.divergence(spec, X, x) + np.einsum("ni,ni->n", phi.taylor(x, 1).gradient(), X(x))
    assert np.max(np.abs(calc.divergence(spec, phiX, x) - rhs)) <= 1e-8


def test_laplacian_examples(euclidean, randers_half):
    assert abs(calc.laplacian(euclidean, "x1^2 + x2^2", [0.5, -0.2]) - 4) <= 1e-14
    weighted = ManifoldSpec.riemannian([["1", "0"], ["0", "1"]], measure="exp(x1)")
    assert abs(calc.laplacian(weighted, "x1", [0.5, -0.2]) - 1) <= 1e-14
    assert abs(calc.laplacian(randers_half, "x1", [0.5, -0.2])) <= 1e-14
    with pytest.raises(DegenerateGradient):
        calc.laplacian(euclidean, "x1^2 + x2^2", [0, 0])


def _fd_laplacian(spec, f, x, h=1e-5):
    """(1/sigma) d/dx^i (sigma grad^i f) by central differences of the gradient field."""
    acc = 0.0
    for i in range(spec.dimension):
        e = np.zeros(spec.dimension)
        e[i] = h
        up = measure_density(spec, x + e) * calc.gradient(spec, f, x + e).grad[..., i]
        dn = measure_density(spec, x - e) * calc.gradient(spec, f, x - e).grad[..., i]
        acc = acc + (up - dn) / (2 * h)
    return acc / measure_density(spec, x)


@pytest.mark.parametrize("name", ["sphere", "randers_curved", "generic_convex"])
def test_laplacian_matches_fd(name, rng):
    spec = getattr(oracles, name)()
    x = rng.uniform(-0.8, 0.8, (20, 2))
    lap = calc.laplacian(spec, U_TEST, x)
    fd = _fd_laplacian(spec, U_TEST, x)
    assert np.max(np.abs(lap - fd) / np.maximum(1, np.abs(fd))) <= 1e-6


def test_p_laplacian(euclidean, randers_curved, rng):
    x = rng.uniform(-0.8, 0.8, (10, 2))
    assert np.array_equal(calc.p_laplacian(randers_curved, U_TEST, x, 2), calc.laplacian(randers_curved, U_TEST, x))
    for p in (1.5, 3.0, 4.0):
        assert abs(calc.p_laplacian(euclidean, "x1", [0.2, 0.1], p)) <= 1e-14
    val = calc.p_laplacian(euclidean, "x1^2 + x2^2", [1.0, 0.0], 4)
    h = 1e-5

    def flux(q, i):
        r = np.hypot(*q)
        return (2 * r) ** 2 * 2 * q[i]

    x0 = np.array([1.0, 0.0])
    fd = sum((flux(x0 + h * e, i) - flux(x0 - h * e, i)) / (2 * h) for i, e in enumerate(np.eye(2)))
    assert abs(val - fd) <= 1e-6 * max(1, abs(fd))
    with pytest.raises(ValueError):
        calc.p_laplacian(euclidean, "x1", [0, 0], 1.0)


# --- Hessians ------------------------------------------------------------------------
def test_hessian_geodesic_examples(euclidean, randers_curved, rng):
    assert calc.hessian_geodesic(euclidean, "x1^2", [0.3, 0.2], [1, 0]) == 2.0
    assert calc.hessian_geodesic(euclidean, "3*x1 - x2", [0.3, 0.2], [1, 2]) == 0.0
    x, y = _pts(rng, 100)
    a = calc.hessian_geodesic(randers_curved, U_TEST, x, y)
    b = calc.hessian_geodesic(randers_curved, U_TEST, x, y, method="spray")
    assert np.max(np.abs(a - b) / np.maximum(1, np.abs(b))) <= 1e-10
    assert np.allclose(calc.hessian_geodesic(randers_curved, U_TEST, x, 3 * y), 9 * a, rtol=1e-12, atol=1e-12)


def test_hessian_matrix_examples(euclidean, randers_half, sphere, rng):
    assert np.array_equal(calc.hessian_matrix(euclidean, "x1*x2", [0.3, 0.2]), [[0, 1], [1, 0]])
    assert np.max(np.abs(calc.hessian_matrix(randers_half, "x1", [0.3, 0.2]))) == 0.0
    x, y = _pts(rng, 10)
    H = calc.hessian_matrix(sphere, U_TEST, x)
    for k in range(10):
        assert np.max(np.abs(H[k] - SPHERE.hessian(U_TEST, x[k]))) <= 1e-8
    D2 = calc.hessian_geodesic(sphere, U_TEST, x, y)
    assert np.max(np.abs(D2 - np.einsum("nij,ni,nj->n", H, y, y))) <= 1e-8
    with pytest.raises(DegenerateGradient):
        calc.hessian_matrix(euclidean, "x1^2", [0, 0.5])


@pytest.mark.parametrize("name", ["sphere", "randers_curved", "generic_convex"])
def test_hessian_via_lie(name, rng):
    spec = getattr(oracles, name)()
    x = rng.uniform(-0.8, 0.8, (50, 2))
    H2, corr = calc.hessian_via_lie(spec, U_TEST, x, return_correction=True)
    H = calc.hessian_matrix(spec, U_TEST, x)
    assert np.max(np.abs(H2 - H) / np.maximum(1, np.abs(H).max(axis=(1, 2)))[:, None, None]) <= 1e-7
    assert np.max(np.abs(H - np.swapaxes(H, 1, 2))) <= 1e-12
    if spec.family == "riemannian":
        assert np.max(np.abs(corr)) <= 1e-12
    assert np.array_equal(calc.hessian_via_lie(oracles.euclidean(), "x1*x2", [0.3, 0.2]), [[0, 1], [1, 0]])


# --- complete lift and Lie derivatives -------------------------------------------
def test_complete_lift(rng):
    h, v = calc.complete_lift(["2", "-1"], [0.3, 0.2], [1, 1])
    assert np.array_equal(h, [2, -1]) and np.array_equal(v, [0, 0])
    h, v = calc.complete_lift(["x2", "0"], [0.3, 0.2], [1, 1])
    assert np.array_equal(v, [1, 0])
    x, y = _pts(rng, 10)
    a = calc.complete_lift(V_TEST, x, y)
    b = calc.complete_lift(ROTATION, x, y)
    s = calc.complete_lift([f"({p}) + 2*({q})" for p, q in zip(V_TEST, ROTATION)], x, y)
    for k in range(2):
        assert np.allclose(s[k], a[k] + 2 * b[k], atol=1e-14)


def test_lie_metric_examples(euclidean):
    x, y = [0.3, -0.4], [0.7, 1.1]
    assert np.max(np.abs(calc.lie_metric(euclidean, ROTATION, x, y))) == 0.0
    assert np.array_equal(calc.lie_metric(euclidean, ["x1", "x2"], x, y), 2 * np.eye(2))


@pytest.mark.parametrize("name", ["randers_curved", "generic_convex", "sphere"])
def test_lie_metric_flow_oracle(name, rng):
    spec = getattr(oracles, name)()
    V = VectorField.parse(V_TEST, 2)
    x, y = _pts(rng, 10, 0.6)

    def g(xx, yy):
        return fundamental_tensor(spec, xx, yy)

    for k in range(10):
        ref = oracles.lie_metric_flow(g, V, x[k], y[k])
        assert np.max(np.abs(calc.lie_metric(spec, V, x[k], y[k]) - ref)) <= 1e-5


def test_lie_finsler_examples(euclidean, randers_curved, rng):
    assert abs(calc.lie_finsler(euclidean, ROTATION, [0.3, 0.4], [1, 2])) <= 1e-15
    assert calc.lie_finsler(euclidean, ["x1", "x2"], [0.3, 0.4], [1, 0]) == 1.0
    x, y = _pts(rng, 200)
    a = calc.lie_finsler(randers_curved, V_TEST, x, y)
    b = calc.lie_finsler(randers_curved, V_TEST, x, y, "direct")
    assert np.max(np.abs(a - b)) <= 1e-9


def test_lie_chern_examples(euclidean, randers_curved, rng):
    x, y = [0.3, -0.4], [0.7, 1.1]
    for method in ("direct", "curvature"):
        assert np.max(np.abs(calc.lie_chern(euclidean, ["1", "2"], x, y, method))) == 0.0
        L = calc.lie_chern(euclidean, ["x1^2", "0"], x, y, method)
        assert L[0, 0, 0] == 2.0
    xs, ys = _pts(rng, 100)
    a = calc.lie_chern(randers_curved, V_TEST, xs, ys)
    b = calc.lie_chern(randers_curved, V_TEST, xs, ys, "curvature")
    assert np.max(np.abs(a - b)) <= 1e-7
    assert np.max(np.abs(a - np.swapaxes(a, -1, -2))) <= 1e-12


def test_lie_spray_examples(euclidean, generic_convex, rng):
    for method in ("bracket", "contraction", "curvature"):
        assert np.max(np.abs(calc.lie_spray(euclidean, ["1", "2"], [0.3, 0.2], [1, 1], method))) == 0.0
        L = calc.lie_spray(euclidean, ["x1^2", "0"], [0.3, 0.2], [1, 0], method)
        assert abs(L[0] + 2) <= 1e-15 and L[1] == 0
    x, y = _pts(rng, 100)
    paths = [calc.lie_spray(generic_convex, V_TEST, x, y, m) for m in ("bracket", "contraction", "curvature")]
    for i in range(3):
        for j in range(i):
            assert np.max(np.abs(paths[i] - paths[j])) <= 1e-7


def test_lie_tensor(euclidean, randers_curved, rng):
    x, y = _pts(rng, 50)
    assert np.max(np.abs(calc.lie_tensor(randers_curved, V_TEST, "y", x, y))) <= 1e-12
    assert np.max(np.abs(calc.lie_tensor(randers_curved, V_TEST, "g", x, y)
                         - calc.lie_metric(randers_curved, V_TEST, x, y))) <= 1e-10
    yl = calc.lie_tensor(euclidean, ["x1", "x2"], "ylow", x, y)
    assert np.allclose(yl, 2 * y, atol=1e-14)
    with pytest.raises(UnsupportedVariance):
        calc.lie_tensor(euclidean, ["x1", "x2"], lambda s, X, Y: None, x, y, variance="uu")


def test_lie_tensor_custom_cartan(randers_curved, rng):
    # a custom (1,2) field goes through both methods; (0,3) is rejected
    def ylow_up(spec, X, Y):  # T^i_jk = y^i delta_jk
        n = spec.dimension
        return stack([stack([stack([Y[i] * (1.0 if j == k else 0.0) for k in range(n)], -1)
                             for j in range(n)], -1) for i in range(n)], -1)

    x, y = _pts(rng, 10)
    a = calc.lie_tensor(randers_curved, V_TEST, ylow_up, x, y, variance="udd")
    b = calc.lie_tensor(randers_curved, V_TEST, ylow_up, x, y, variance="udd", method="partial")
    assert np.max(np.abs(a - b)) <= 1e-10
    with pytest.raises(UnsupportedVariance):
        calc.lie_tensor(randers_curved, V_TEST, ylow_up, x, y, variance="ddd")


def test_killing_consistency(euclidean, sphere, rng):
    cases = [(euclidean, ["1", "0"], rng.uniform(-1, 1, (20, 2))),
             (euclidean, ["0.3", "-2"], rng.uniform(-1, 1, (20, 2))),
             (sphere, SPHERE_TILT, np.column_stack([rng.uniform(-1, 1, 20), np.zeros(20)]))]
    for spec, V, x in cases:
        y = rng.standard_normal((len(x), 2))
        Lg = calc.lie_metric(spec, V, x, y)
        w = np.einsum("nlm,nm->nl", calc.covariant_first(spec, V, x, y), y)
        assert np.max(np.abs(Lg)) <= 1e-12 and np.max(np.abs(w)) <= 1e-12
        assert np.max(np.abs(calc.lie_finsler(spec, V, x, y))) <= 1e-12
    # isometries with y^m V^l_|m != 0 still preserve F
    for spec, V in ((euclidean, ROTATION), (sphere, ROTATION), (sphere, SPHERE_TILT)):
        x, y = _pts(rng, 20)
        assert np.max(np.abs(calc.lie_metric(spec, V, x, y))) <= 1e-12
        assert np.max(np.abs(calc.lie_finsler(spec, V, x, y))) <= 1e-12


def test_lie_finsler_equals_directional_derivative(randers_curved, rng):
    x, y = _pts(rng, 10)
    h = 1e-6
    hv, vv = calc.complete_lift(V_TEST, x, y)
    fd = (finsler_norm(randers_curved, x + h * hv, y + h * vv)
          - finsler_norm(randers_curved, x - h * hv, y - h * vv)) / (2 * h)
    assert np.max(np.abs(calc.lie_finsler(randers_curved, V_TEST, x, y) - fd)) <= 1e-8
