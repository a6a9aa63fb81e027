"""Randomized property suites behind ``finsler verify``.

Each suite draws its samples with a generator keyed by (seed, suite, sample
index), so a sample does not depend on how the work is split.  Evaluation runs
in fixed-size chunks (optionally on several threads); errors are aggregated by
maximum and the witness is the lowest sample index attaining it.  Reports are
therefore identical for any worker count.

Errors are measured as ||a - b||_inf / max(1, ||b||_inf) per sample unless a
check says otherwise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import calculus as calc
from . import legendre as leg
from .connection import evaluate_connection
from .errors import FinslerError
from .expr import ScalarField, VectorField
from .metric import (ManifoldSpec, _cartan, _fundamental, _norm, _y_jets, coefficients,
                     measure_density, validate_spec)
from .spectral import GridContext, divergence_theorem_check

__all__ = ["SUITES", "CheckResult", "run_suites", "random_scalar_source", "random_vector_sources"]

SUITES = ("metric", "connection", "duality", "gradient", "lie", "hessian", "divergence")
_SUITE_ID = {name: i + 1 for i, name in enumerate(SUITES)}
CHUNK = 128
RADIUS = 0.8
FIELDS = 4


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    witness: dict | None
    samples: int
    seed: int
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def to_dict(self) -> dict:
        d = {"status": "pass" if self.passed else "fail", "max_error": self.max_error,
             "tolerance": self.tolerance, "witness": self.witness, "samples": self.samples,
             "seed": self.seed}
        if self.note:
            d["note"] = self.note
        return d


# --- random inputs ------------------------------------------------------------
def _coef(rng, scale=1.0):
    return repr(round(float(rng.uniform(-scale, scale)), 6))


def random_scalar_source(rng: np.random.Generator, n: int) -> str:
    """A smooth, non-degenerate trigonometric/polynomial function of x1..xn."""
    xs = [f"x{i + 1}" for i in range(n)]
    lin = " + ".join(f"{_coef(rng)}*{v}" for v in xs)
    terms = [f"{_coef(rng)}*sin({lin} + {_coef(rng)})",
             f"{_coef(rng, 0.5)}*cos({' + '.join(f'{_coef(rng)}*{v}' for v in xs)})",
             " + ".join(f"({_coef(rng, 2.0)} + 0.1)*{v}" for v in xs)]
    if n > 1:
        terms.append(f"{_coef(rng, 0.5)}*{xs[0]}*{xs[1]}")
    terms.append(f"{_coef(rng, 0.5)}*{xs[-1]}^2")
    return " + ".join(terms)


def random_vector_sources(rng: np.random.Generator, n: int) -> list[str]:
    return [random_scalar_source(rng, n) for _ in range(n)]


def _sample(seed: int, suite: str, index: int, n: int):
    rng = np.random.default_rng([seed, _SUITE_ID[suite], index])
    x = rng.uniform(-RADIUS, RADIUS, n)
    y = rng.standard_normal(n)
    z = rng.standard_normal(n)
    return x, y, z, index % FIELDS


def _fields(seed: int, suite: str, n: int):
    rng = np.random.default_rng([seed, _SUITE_ID[suite], 2 ** 32 - 1])
    return ([random_scalar_source(rng, n) for _ in range(FIELDS)],
            [random_vector_sources(rng, n) for _ in range(FIELDS)])


def _err(a, b, axes=None) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    k = a.ndim - 1
    axes = tuple(range(1, a.ndim)) if axes is None else axes
    if k == 0:
        return np.abs(a - b) / np.maximum(1.0, np.abs(b))
    return np.max(np.abs(a - b), axis=axes) / np.maximum(1.0, np.max(np.abs(b), axis=axes))


def _zero(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.max(np.abs(a), axis=tuple(range(1, a.ndim))) if a.ndim > 1 else np.abs(a)


# --- per-chunk checks ----------------------------------------------------------
def _metric_chunk(spec, x, y, z, fid, ctx):
    n = spec.dimension
    out = {}
    F = _norm(spec, x, y)
    g = _fundamental(spec, x, y)
    C = _cartan(spec, x, y)
    F2 = F * F
    dF2 = _y_jets(spec, x, y, 1).gradient()
    out["euler_F2"] = (np.abs(np.einsum("ni,ni->n", dF2, y) - 2 * F2) / (2 * F2), 1e-9)
    out["euler_g"] = (np.abs(np.einsum("nij,ni,nj->n", g, y, y) - F2) / F2, 1e-9)
    out["cartan_y_contraction"] = (_zero(np.einsum("ni,nijk->njk", y, C)) /
                                   np.maximum(1.0, np.max(np.abs(y), -1) * np.max(np.abs(C), (1, 2, 3))), 1e-9)
    out["cartan_symmetric"] = (_zero(C - np.swapaxes(C, -1, -2)) + _zero(C - np.swapaxes(C, -3, -2)), 1e-12)
    hom_F = np.zeros(len(x))
    hom_g = np.zeros(len(x))
    for c in (0.5, 2.0, 7.3):
        hom_F = np.maximum(hom_F, np.abs(_norm(spec, x, c * y) - c * F) / (c * F))
        hom_g = np.maximum(hom_g, _err(_fundamental(spec, x, c * y), g))
    out["homogeneity_F"] = (hom_F, 1e-12)
    out["homogeneity_g"] = (hom_g, 1e-12)
    out["g_positive_definite"] = (np.maximum(0.0, -np.linalg.eigvalsh(g)[:, 0]), 0.0)
    if spec.family != "generic":
        out["closed_form_vs_ad_g"] = (_err(_fundamental(spec, x, y, "ad"), g), 1e-12)
        out["closed_form_vs_ad_C"] = (_err(_cartan(spec, x, y, "ad"), C), 1e-12)
    return out


def _connection_chunk(spec, x, y, z, fid, ctx):
    c = evaluate_connection(spec, x, y, order=4)
    out = {}
    half = 0.5 * np.einsum("nijk,nj,nk->ni", c.Gamma, y, y)
    out["spray_from_chern"] = (_err(half, c.G), 1e-9)
    out["chern_symmetric"] = (_zero(c.Gamma - np.swapaxes(c.Gamma, -1, -2)), 0.0)
    out["connection_euler"] = (_err(np.einsum("nij,nj->ni", c.N, y), 2 * c.G), 1e-9)
    out["metric_compatibility"] = (_zero(c.metric_covariant) / np.maximum(1.0, _zero(c.delta_g)), 1e-8)
    R = c.R
    out["curvature_antisymmetry"] = (_zero(R + np.swapaxes(R, -1, -2)) / np.maximum(1.0, _zero(R)), 1e-9)
    if spec.family == "riemannian":
        c2 = evaluate_connection(spec, x, z, order=3)
        out["chern_y_independent"] = (_err(c2.Gamma, c.Gamma), 1e-10)
        out["landsberg_riemannian"] = (_zero(c.P), 1e-10)
    return out


def _duality_chunk(spec, x, y, z, fid, ctx):
    out = {}
    xi = leg.legendre(spec, x, y)
    yb = leg.legendre_inverse(spec, x, xi)
    out["roundtrip"] = (_err(yb, y), 1e-9)
    F = _norm(spec, x, y)
    out["norm_preservation"] = (np.abs(leg.dual_norm(spec, x, xi) - F) / F, 1e-10)
    eta = z  # an independent covector
    w = leg.legendre_inverse(spec, x, eta)
    Fs = np.asarray(leg.dual_norm(spec, x, eta))
    out["dual_norm_chain"] = (np.abs(np.einsum("ni,ni->n", eta, w) / _norm(spec, x, w) - Fs) / Fs, 1e-10)
    gs = leg.dual_fundamental_tensor(spec, x, eta)
    g = _fundamental(spec, x, w)
    eye = np.broadcast_to(np.eye(spec.dimension), g.shape)
    out["matrix_duality"] = (_zero(np.einsum("nij,njk->nik", gs, g) - eye), 1e-8)
    out["dual_raise"] = (_err(np.einsum("nij,nj->ni", gs, eta), w), 1e-9)
    hom = np.zeros(len(x))
    homg = np.zeros(len(x))
    for c in (0.5, 2.0, 7.3):
        hom = np.maximum(hom, np.abs(np.asarray(leg.dual_norm(spec, x, c * eta)) - c * Fs) / (c * Fs))
        homg = np.maximum(homg, _err(leg.dual_fundamental_tensor(spec, x, c * eta), gs))
    out["homogeneity_dual_norm"] = (hom, 1e-12)
    out["homogeneity_dual_tensor"] = (homg, 1e-12)
    if spec.family == "randers":
        out["closed_vs_newton_legendre_inverse"] = (_err(leg.legendre_inverse(spec, x, eta, method="newton"), w), 1e-8)
        out["closed_vs_newton_dual_norm"] = (np.abs(np.asarray(leg.dual_norm(spec, x, eta, method="newton")) - Fs) / Fs, 1e-8)
        out["closed_vs_inverse_dual_tensor"] = (_err(leg.dual_fundamental_tensor(spec, x, eta, method="inverse"), gs), 1e-8)
        out["closed_vs_ad_dual_tensor"] = (_err(leg.dual_fundamental_tensor(spec, x, eta, method="ad"), gs), 1e-9)
        gen = ctx["generic"]
        out["closed_vs_ad_legendre"] = (_err(leg.legendre(gen, x, y), xi), 1e-8)
        d = leg.randers_dual_data(spec, x)
        out["dual_b_equals_b"] = (np.abs(d.bstar_norm - d.b), 1e-12)
        back = leg._dual_data(d.astar, d.bstar)
        a, b = coefficients(spec, x)
        out["dual_data_roundtrip"] = (np.maximum(_err(back.astar, a), _err(back.bstar, b)), 1e-12)
    return out


def _by_field(fid, fields, fn, *arrays):
    """Evaluate fn(field, *arrays[mask]) per field id and reassemble along axis 0."""
    result = None
    for k in range(len(fields)):
        m = fid == k
        if not np.any(m):
            continue
        val = np.asarray(fn(fields[k], *[a[m] for a in arrays]))
        if result is None:
            result = np.zeros((len(fid),) + val.shape[1:])
        result[m] = val
    return result


def _gradient_chunk(spec, x, y, z, fid, ctx):
    fs = ctx["scalars"]
    out = {}

    def chain(f, xx):
        r = calc.gradient(spec, f, xx)
        a = np.einsum("ni,ni->n", r.df, r.grad)
        return np.maximum(np.abs(a - r.F_grad ** 2), np.abs(a - r.F_star_df ** 2)) / np.maximum(1.0, a)

    out["gradient_duality_chain"] = (_by_field(fid, fs, chain, x), 1e-9)
    if spec.family == "randers":
        def paths(f, xx):
            return _err(calc.gradient(spec, f, xx, method="legendre").grad, calc.gradient(spec, f, xx).grad)

        def estimate(f, xx):
            r = calc.gradient(spec, f, xx)
            return np.maximum(0.0, r.F_grad - r.alpha_norm / (1.0 - r.b))

        out["randers_formula_vs_legendre"] = (_by_field(fid, fs, paths, x), 1e-9)
        out["gradient_estimate"] = (_by_field(fid, fs, estimate, x), 1e-12)
    return out


def _lie_chunk(spec, x, y, z, fid, ctx):
    Vs = ctx["vectors"]
    out = {}

    def chern_paths(V, xx, yy):
        return _err(calc.lie_chern(spec, V, xx, yy, "curvature"), calc.lie_chern(spec, V, xx, yy))

    def spray(V, xx, yy):
        a, b, c = (calc.lie_spray(spec, V, xx, yy, m) for m in ("bracket", "contraction", "curvature"))
        return np.maximum(np.maximum(_err(a, b), _err(a, c)), _err(b, c))

    def lief(V, xx, yy):
        return _err(calc.lie_finsler(spec, V, xx, yy), calc.lie_finsler(spec, V, xx, yy, "direct"))

    def tensor_g(V, xx, yy):
        lm = calc.lie_metric(spec, V, xx, yy)
        return np.maximum(_err(calc.lie_tensor(spec, V, "g", xx, yy), lm),
                          _err(calc.lie_tensor(spec, V, "g", xx, yy, method="partial"), lm))

    def lie_y(V, xx, yy):
        return np.maximum(_zero(calc.lie_tensor(spec, V, "y", xx, yy)),
                          _zero(calc.lie_tensor(spec, V, "y", xx, yy, method="partial")))

    def lie_ylow(V, xx, yy):
        V1 = calc.covariant_first(spec, V, xx, yy)
        g = _fundamental(spec, xx, yy)
        low = np.einsum("nil,nlj->nij", g, V1)  # V_{i|j}
        expect = np.einsum("nm,nkm->nk", yy, low + np.swapaxes(low, -1, -2))
        return _err(calc.lie_tensor(spec, V, "ylow", xx, yy), expect)

    def sym(V, xx, yy):
        lm = calc.lie_metric(spec, V, xx, yy)
        lc = calc.lie_chern(spec, V, xx, yy)
        return np.maximum(_zero(lm - np.swapaxes(lm, -1, -2)), _zero(lc - np.swapaxes(lc, -1, -2)))

    out["theorem_chern_lie_paths"] = (_by_field(fid, Vs, chern_paths, x, y), 1e-7)
    out["spray_lie_three_paths"] = (_by_field(fid, Vs, spray, x, y), 1e-7)
    out["lie_F_two_paths"] = (_by_field(fid, Vs, lief, x, y), 1e-9)
    out["lie_tensor_g_vs_lie_metric"] = (_by_field(fid, Vs, tensor_g, x, y), 1e-10)
    out["lie_canonical_section_zero"] = (_by_field(fid, Vs, lie_y, x, y), 1e-10)
    out["lie_lowered_section"] = (_by_field(fid, Vs, lie_ylow, x, y), 1e-10)
    out["lie_symmetry"] = (_by_field(fid, Vs, sym, x, y), 1e-10)
    return out


def _hessian_chunk(spec, x, y, z, fid, ctx):
    fs = ctx["scalars"]
    out = {}

    def via_lie(u, xx):
        h2, corr = calc.hessian_via_lie(spec, u, xx, return_correction=True)
        return np.stack([_err(h2, calc.hessian_matrix(spec, u, xx)), _zero(corr)], axis=-1)

    res = _by_field(fid, fs, via_lie, x)
    out["hessian_via_lie"] = (res[:, 0], 1e-7)

    def sym(u, xx):
        H = calc.hessian_matrix(spec, u, xx)
        return _zero(H - np.swapaxes(H, -1, -2))

    out["hessian_symmetric"] = (_by_field(fid, fs, sym, x), 1e-12)

    def geo(u, xx, yy):
        return _err(calc.hessian_geodesic(spec, u, xx, yy, "spray"), calc.hessian_geodesic(spec, u, xx, yy))

    out["geodesic_hessian_two_forms"] = (_by_field(fid, fs, geo, x, y), 1e-10)
    if spec.family == "riemannian":
        out["cartan_correction_zero"] = (res[:, 1], 1e-12)

        def rem(u, xx, yy):
            H = calc.hessian_matrix(spec, u, xx)
            return _err(calc.hessian_geodesic(spec, u, xx, yy), np.einsum("nij,ni,nj->n", H, yy, yy))

        out["hessians_identical_riemannian"] = (_by_field(fid, fs, rem, x, y), 1e-8)
    return out


def _divergence_chunk(spec, x, y, z, fid, ctx):
    n = spec.dimension
    fs, Vs = ctx["scalar_src"], ctx["vector_src"]
    out = {}

    def leibniz(k, xx):
        phi = ScalarField.parse(fs[k], n)
        X = VectorField.parse(Vs[k], n)
        phiX = VectorField.parse([f"({fs[k]})*({c})" for c in Vs[k]], n)
        lhs = calc.divergence(spec, phiX, xx)
        dphi = phi.taylor(xx, 1).gradient()
        rhs = phi(xx) * calc.divergence(spec, X, xx) + np.einsum("ni,ni->n", dphi, X(xx))
        return _err(lhs, rhs)

    def fd(k, xx):
        X = VectorField.parse(Vs[k], n)
        h = 1e-5
        sig = measure_density(spec, xx)
        acc = 0.0
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            acc = acc + ((measure_density(spec, xx + e) * X(xx + e)[:, i])
                         - (measure_density(spec, xx - e) * X(xx - e)[:, i])) / (2 * h)
        return _err(calc.divergence(spec, X, xx), acc / sig)

    ids = np.arange(FIELDS)
    out["leibniz"] = (_by_field(fid, ids, leibniz, x), 1e-8)
    out["divergence_vs_fd"] = (_by_field(fid, ids, fd, x), 1e-6)
    return out


_CHUNKS: dict[str, Callable] = {
    "metric": _metric_chunk, "connection": _connection_chunk, "duality": _duality_chunk,
    "gradient": _gradient_chunk, "lie": _lie_chunk, "hessian": _hessian_chunk,
    "divergence": _divergence_chunk,
}


def _grid_divergence(spec: ManifoldSpec, seed: int) -> list[CheckResult]:
    if spec.dimension > 2:
        return []
    rng = np.random.default_rng([seed, _SUITE_ID["divergence"], 2 ** 32 - 2])
    N = (64,) if spec.dimension == 1 else (24, 24)
    try:
        ctx = GridContext(spec, N, (2 * np.pi,) * spec.dimension)
    except FinslerError:
        return [CheckResult("grid_divergence_theorem", 0.0, 1e-10, None, 0, seed,
                            note="skipped: measure not positive on the periodic grid")]
    worst, wit = 0.0, None
    for k in range(FIELDS):
        comps = [" + ".join(f"{_coef(rng)}*sin({int(rng.integers(1, 4))}*x{j + 1} + {_coef(rng)})"
                            for j in range(spec.dimension)) for _ in range(spec.dimension)]
        r = divergence_theorem_check(ctx, comps)["relative"]
        if r > worst or wit is None:
            worst, wit = max(worst, r), {"index": k, "field": comps}
    return [CheckResult("grid_divergence_theorem", worst, 1e-10, wit, FIELDS, seed)]


def _aggregate(name, errs, tol, xs, ys, seed):
    errs = np.nan_to_num(np.asarray(errs, dtype=float), nan=np.inf)
    i = int(np.argmax(errs))  # first index of the maximum
    witness = {"index": i, "x": xs[i].tolist(), "y": ys[i].tolist()}
    return CheckResult(name, float(errs[i]), tol, witness, len(errs), seed)


def run_suite(spec: ManifoldSpec, suite: str, samples: int, seed: int = 0,
              workers: int = 1) -> list[CheckResult]:
    n = spec.dimension
    pts = [_sample(seed, suite, i, n) for i in range(samples)]
    xs = np.array([p[0] for p in pts]).reshape(samples, n)
    ys = np.array([p[1] for p in pts]).reshape(samples, n)
    zs = np.array([p[2] for p in pts]).reshape(samples, n)
    fid = np.array([p[3] for p in pts], dtype=int)
    scalars, vectors = _fields(seed, suite, n)
    ctx = {"scalars": [ScalarField.parse(s, n) for s in scalars],
           "vectors": [VectorField.parse(v, n) for v in vectors],
           "generic": spec.as_generic()}
    ctx["scalar_src"], ctx["vector_src"] = scalars, vectors
    fn = _CHUNKS[suite]
    bounds = [(s, min(s + CHUNK, samples)) for s in range(0, samples, CHUNK)]

    def work(b):
        s, e = b
        return fn(spec, xs[s:e], ys[s:e], zs[s:e], fid[s:e], ctx)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    results = []
    for name in parts[0]:
        tol = parts[0][name][1]
        errs = np.concatenate([np.atleast_1d(p[name][0]) for p in parts])
        results.append(_aggregate(f"{suite}.{name}", errs, tol, xs, ys, seed))
    if suite == "divergence":
        for r in _grid_divergence(spec, seed):
            r.name = f"{suite}.{r.name}"
            results.append(r)
    return results


def run_suites(spec: ManifoldSpec, suite: str = "all", samples: int = 200, seed: int = 0,
               workers: int = 1) -> dict:
    """Validity check, then the requested suites; returns the report dictionary."""
    report = validate_spec(spec, sample_count=max(samples, 64), seed=seed, radius=RADIUS)
    checks: dict[str, dict] = {
        "validity": {"status": "pass" if report.ok else "fail",
                     "max_error": 0.0 if report.ok else 1.0, "tolerance": 0.0,
                     "witness": report.violations[0].to_dict() if report.violations else None,
                     "violations": [v.to_dict() for v in report.violations],
                     "samples": report.samples, "seed": seed}}
    names = SUITES if suite == "all" else (suite,)
    if report.ok:
        for name in names:
            for r in run_suite(spec, name, samples, seed, workers):
                checks[r.name] = r.to_dict()
    else:
        for name in names:
            checks[name] = {"status": "skipped", "reason": "spec failed validity check"}
    ok = all(c["status"] == "pass" for c in checks.values()) and report.ok
    return {"ok": ok, "suite": suite, "samples": samples, "seed": seed, "checks": checks}
