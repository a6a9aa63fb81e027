"""Command-line front end.

    finsler [--spec PATH] [--seed N] [--json] [--quiet] COMMAND [options]

Commands: tensors, grad, laplacian, lie, hessian, legendre, eig, verify.
Exit codes: 0 ok, 1 check failure, 2 input error, 3 evaluation error,
4 non-convergence.  Errors are reported as one JSON object on stderr.
The environment variable FINSLER_THREADS sets the worker count of ``verify``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import calculus as calc
from . import connection as conn
from . import legendre as leg
from . import metric
from . import spectral
from .errors import FinslerError, InputError, NotConverged, SpecError
from .expr import ScalarField, VectorField
from .suites import SUITES, run_suites

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_EVAL, EXIT_CONVERGENCE = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage errors become JSON diagnostics, exit 2
        raise InputError(message)


def _clean(v: Any) -> Any:
    """Convert numpy values to JSON-ready Python objects; non-finite floats become null."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def _dumps(obj) -> str:
    # repr-based float output is the shortest string that round-trips the double
    return json.dumps(_clean(obj), indent=2, sort_keys=False, allow_nan=False)


def _emit(args, payload: dict):
    if args.quiet:
        return
    if args.json:
        print(_dumps(payload))
        return
    for key, val in _clean(payload).items():
        print(f"{key}: {json.dumps(val)}")


def _vector(text: str, n: int, name: str) -> np.ndarray:
    try:
        vals = [float(s) for s in text.split(",")]
    except ValueError:
        raise InputError(f"--{name} must be comma-separated reals, got '{text}'") from None
    if len(vals) != n:
        raise InputError(f"--{name} needs {n} components, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise InputError(f"--{name} components must be finite")
    return np.array(vals)


def _ints(text: str, name: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise InputError(f"--{name} must be comma-separated integers") from None


def _floats(text: str, name: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError:
        raise InputError(f"--{name} must be comma-separated reals") from None


def _spec(args) -> metric.ManifoldSpec:
    path = getattr(args, "spec_file", None) or args.spec
    if not path:
        raise SpecError("a manifold spec is required (--spec PATH or positional path)")
    return metric.ManifoldSpec.load(path)


def _parse_field(text: str, n: int) -> ScalarField:
    return ScalarField.parse(text, n)


def _parse_vector(text: str, n: int) -> VectorField:
    parts = [s.strip() for s in text.split(";")]
    if len(parts) != n:
        raise InputError(f"--V needs {n} components separated by ';', got {len(parts)}")
    return VectorField.parse(parts, n)


def _threads() -> int:
    raw = os.environ.get("FINSLER_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise InputError(f"FINSLER_THREADS must be a positive integer, got '{raw}'") from None
    if k < 1:
        raise InputError("FINSLER_THREADS must be a positive integer")
    return k


# --- commands ---------------------------------------------------------------------
def cmd_tensors(args) -> int:
    spec = _spec(args)
    n = spec.dimension
    x, y = _vector(args.x, n, "x"), _vector(args.y, n, "y")
    F = metric.finsler_norm(spec, x, y)
    g = metric.fundamental_tensor(spec, x, y)
    C = metric.cartan_tensor(spec, x, y)
    c = conn.evaluate_connection(spec, x, y, order=4)
    _emit(args, {"F": F, "g": g, "C": C, "G": c.G, "N": c.N, "Gamma": c.Gamma, "R": c.R, "P": c.P})
    return EXIT_OK


def cmd_grad(args) -> int:
    spec = _spec(args)
    n = spec.dimension
    x = _vector(args.x, n, "x")
    f = _parse_field(args.f, n)
    r = calc.gradient(spec, f, x)
    out = {"grad": r.grad, "F_grad": r.F_grad, "F_star_df": r.F_star_df, "df": r.df,
           "critical_point": bool(r.critical)}
    if spec.family == "randers":
        lhs, rhs = calc.gradient_estimate(spec, f, x)
        out.update(A=r.A, beta_dot=r.beta_dot, alpha_norm=r.alpha_norm, b=r.b,
                   grad_via_legendre=calc.gradient(spec, f, x, method="legendre").grad, bound=rhs)
    _emit(args, out)
    return EXIT_OK


def cmd_laplacian(args) -> int:
    spec = _spec(args)
    n = spec.dimension
    x = _vector(args.x, n, "x")
    f = _parse_field(args.f, n)
    if args.p is not None and args.p != 2:
        _emit(args, {"p_laplacian": calc.p_laplacian(spec, f, x, args.p), "p": args.p})
    else:
        _emit(args, {"laplacian": calc.laplacian(spec, f, x)})
    return EXIT_OK


def cmd_lie(args) -> int:
    spec = _spec(args)
    n = spec.dimension
    x, y = _vector(args.x, n, "x"), _vector(args.y, n, "y")
    V = _parse_vector(args.V, n)
    hv, vv = calc.complete_lift(V, x, y)
    out = {
        "lift_horizontal": hv, "lift_vertical": vv,
        "lie_F": calc.lie_finsler(spec, V, x, y),
        "lie_F_direct": calc.lie_finsler(spec, V, x, y, "direct"),
        "lie_g": calc.lie_metric(spec, V, x, y),
        "lie_ylow": calc.lie_tensor(spec, V, "ylow", x, y),
        "lie_Gamma": calc.lie_chern(spec, V, x, y),
        "lie_Gamma_curvature": calc.lie_chern(spec, V, x, y, "curvature"),
        "lie_G_bracket": calc.lie_spray(spec, V, x, y, "bracket"),
        "lie_G_contraction": calc.lie_spray(spec, V, x, y, "contraction"),
        "lie_G_curvature": calc.lie_spray(spec, V, x, y, "curvature"),
    }
    _emit(args, out)
    return EXIT_OK


def cmd_hessian(args) -> int:
    spec = _spec(args)
    n = spec.dimension
    x = _vector(args.x, n, "x")
    u = _parse_field(args.f, n)
    H = calc.hessian_matrix(spec, u, x)
    HL, corr = calc.hessian_via_lie(spec, u, x, return_correction=True)
    out = {"hessian": H, "hessian_via_lie": HL, "cartan_correction": corr}
    if args.y:
        y = _vector(args.y, n, "y")
        out["D2f_y"] = calc.hessian_geodesic(spec, u, x, y)
    _emit(args, out)
    return EXIT_OK


def cmd_legendre(args) -> int:
    spec = _spec(args)
    n = spec.dimension
    x = _vector(args.x, n, "x")
    if (args.y is None) == (args.xi is None):
        raise InputError("give exactly one of --y (forward map) or --xi (inverse map)")
    if args.y is not None:
        y = _vector(args.y, n, "y")
        xi = leg.legendre(spec, x, y)
    else:
        xi = _vector(args.xi, n, "xi")
        y = leg.legendre_inverse(spec, x, xi)
    out = {"y": y, "xi": xi}
    if np.any(y != 0):
        out["F"] = metric.finsler_norm(spec, x, y)
        out["F_star"] = leg.dual_norm(spec, x, xi)
        out["g_star"] = leg.dual_fundamental_tensor(spec, x, xi)
    _emit(args, out)
    return EXIT_OK


def cmd_eig(args) -> int:
    spec = _spec(args)
    grid = _ints(args.grid, "grid")
    period = _floats(args.period, "period") if args.period else (2 * math.pi,) * len(grid)
    if len(period) == 1 and len(grid) > 1:
        period = period * len(grid)
    if len(grid) == 1 and spec.dimension > 1:
        grid = grid * spec.dimension
        period = period * spec.dimension if len(period) == 1 else period
    ctx = spectral.GridContext(spec, grid, period)
    failure = None
    try:
        res = spectral.minimize_rayleigh(ctx, max_iters=args.max_iters, tol=args.tol, seed=args.seed,
                                         trace=args.trace)
    except NotConverged as exc:
        # the best iterate is still reported on stdout; the diagnostic goes to stderr
        res, failure = exc.result, exc
    if args.eigenfunction:
        spectral.write_eigenfunction(ctx, res.u, args.eigenfunction)
    _emit(args, res.to_dict())
    if failure is not None:
        raise failure
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _spec(args)
    if args.samples < 1:
        raise InputError("--samples must be positive")
    report = run_suites(spec, args.suite, args.samples, args.seed, workers=_threads())
    text = _dumps(report)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if not args.quiet:
        if args.json or not args.report:
            print(text)
        else:
            for name, c in report["checks"].items():
                print(f"{c['status']:7s} {name}  max_error={c.get('max_error')}  tol={c.get('tolerance')}")
    return EXIT_OK if report["ok"] else EXIT_CHECK


COMMANDS = {"tensors": cmd_tensors, "grad": cmd_grad, "laplacian": cmd_laplacian, "lie": cmd_lie,
            "hessian": cmd_hessian, "legendre": cmd_legendre, "eig": cmd_eig, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--spec", default=argparse.SUPPRESS, help="path to a ManifoldSpec JSON file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="JSON output")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="no stdout output")

    p = _Parser(prog="finsler", description="Finsler geometry toolkit", parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        s = sub.add_parser(name, help=help_, parents=[common])
        s.add_argument("spec_file", nargs="?", help="ManifoldSpec JSON (alternative to --spec)")
        return s

    s = add("tensors", "F, g, C, G, N, Gamma, R and P at a tangent sample")
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)

    s = add("grad", "gradient of a function (with the Randers estimate)")
    s.add_argument("--f", required=True)
    s.add_argument("--x", required=True)

    s = add("laplacian", "Laplacian or p-Laplacian of a function at a point")
    s.add_argument("--f", required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--p", type=float, default=None)

    s = add("lie", "Lie derivatives along the complete lift of a vector field")
    s.add_argument("--V", required=True, help="components separated by ';'")
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)

    s = add("hessian", "Hessian of a function (two paths) and optionally D^2 f(y)")
    s.add_argument("--f", required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--y", default=None)

    s = add("legendre", "Legendre transform (--y) or its inverse (--xi)")
    s.add_argument("--x", required=True)
    s.add_argument("--y", default=None)
    s.add_argument("--xi", default=None)

    s = add("eig", "first eigenvalue on a periodic grid")
    s.add_argument("--grid", required=True, help="N or N1,N2")
    s.add_argument("--period", default=None, help="L or L1,L2 (default 2*pi)")
    s.add_argument("--max-iters", type=int, default=50000)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--trace", default=None, help="per-iteration CSV output")
    s.add_argument("--eigenfunction", default=None, help="eigenfunction CSV output")

    s = add("verify", "run the randomized property suites")
    s.add_argument("--suite", default="all", choices=("all",) + SUITES)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--report", default=None, help="write the JSON report to this path")
    return p


def _error(exc: FinslerError) -> int:
    sys.stderr.write(_dumps(exc.to_dict()) + "\n")
    return exc.exit_code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name, default in (("spec", None), ("seed", 0), ("json", False), ("quiet", False)):
            if not hasattr(args, name):
                setattr(args, name, default)
        if args.seed < 0:
            raise InputError("--seed must be non-negative")
        return COMMANDS[args.command](args)
    except FinslerError as exc:
        return _error(exc)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        return _error(_Wrapped(str(exc)))


class _Wrapped(FinslerError):
    """Evaluation failure raised by numpy or arithmetic outside the library's own checks."""


if __name__ == "__main__":
    sys.exit(main())
