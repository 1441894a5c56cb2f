"""Command-line front end: ``stein-exp <command> [options]``.

Exit status is 0 when every check of the selected experiment passes, 1 when
a check fails, and 2 for usage errors (including configurations outside the
theorem's hypotheses).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import mc_engine as mc
from . import stein_core as sc
from . import symbolic as sym
from .family import stein_test_family

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

DEFAULTS = {"n": 8, "t": 1e-3, "count": 100_000, "seed": 42}


def _workers(args) -> int:
    env = os.environ.get("STEIN_EXP_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, args.workers)


def _common(p: argparse.ArgumentParser, *, n=True, t=False, count=True, seed=True) -> None:
    if n:
        p.add_argument("--n", type=int, default=DEFAULTS["n"], help="matrix dimension (default 8)")
    if t:
        p.add_argument("--t", type=float, default=DEFAULTS["t"], help="heat-kernel time (default 1e-3)")
    if count:
        p.add_argument("--count", type=int, default=DEFAULTS["count"], help="number of samples (default 1e5)")
    if seed:
        p.add_argument("--seed", type=int, default=DEFAULTS["seed"], help="base seed (default 42)")
    p.add_argument("--output", default=None, help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--workers", type=int, default=1, help="worker threads (env STEIN_EXP_WORKERS overrides)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stein-exp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("stein-verify", help="Stein-equation residuals, closed forms and solution bounds")
    _common(p, n=False, count=False, seed=False)

    p = sub.add_parser("symbolic-verify", help="exact Laplacian identities and the fourth-moment coefficient")
    _common(p, n=False, count=False, seed=False)

    p = sub.add_parser("haar-check", help="moments of |Tr U|^2 and a KS invariance test")
    _common(p)

    p = sub.add_parser("pair-stats", help="empirical exchangeable-pair statistics and the resulting bound")
    _common(p, t=True)
    p.add_argument("--replicas", type=int, default=100, help="inner diffusion replicas per U (default 100)")
    p.add_argument("--delta", type=float, default=None, help="smoothing width (default: optimized)")

    p = sub.add_parser("kolmogorov", help="empirical Kolmogorov distance of |Tr U^k|^2/k to Exp(1)")
    _common(p)
    p.add_argument("--power", type=int, default=1, help="trace power k (default 1)")

    p = sub.add_parser("verify-main2", help="check d_K(|Tr U|^2, Exp(1)) <= 2^(9/4)/sqrt(n)")
    _common(p)

    p = sub.add_parser("lis-check", help="longest-increasing-subsequence moment identity")
    _common(p, n=False)
    p.add_argument("--n-perm", type=int, default=3, help="permutation size (<= 4)")
    p.add_argument("--l", type=int, default=2, help="unitary dimension / LIS threshold")

    p = sub.add_parser("bound-calc", help="Kolmogorov bound from given pair statistics")
    _common(p, n=False, count=False, seed=False)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--t1", type=float, default=0.0)
    p.add_argument("--mean-gap", type=float, default=0.0)
    p.add_argument("--third", type=float, default=0.0)
    p.add_argument("--remainder", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=None, help="smoothing width (default: optimized)")
    return parser


# --------------------------------------------------------------------------
# commands; each returns (report kwargs, csv body or None)


def cmd_stein_verify(args):
    grid = np.linspace(30.0 / 200, 30.0, 200)
    rows = {}
    ok = True
    for h in stein_test_family():
        sol = sc.solve_stein(h)
        resid = float(np.max(np.abs(sol.residual(grid))))
        bounds = sc.verify_solution_bounds(h.shifted(), np.linspace(0.01, 50.0, 2000))
        rows[h.name] = {
            "residual": resid,
            "ratio_f": bounds.ratio_f,
            "ratio_f_prime": bounds.ratio_f_prime,
            "ratio_f_double_prime": bounds.ratio_f_double_prime,
        }
        ok &= resid <= 1e-6 and bounds.ok
    w = np.linspace(0.01, 30.0, 200)
    lin = sc.solve_stein(sc.TestFunction(lambda x: x, lambda x: np.ones_like(x), 1.0, 0.0))
    ex = sc.solve_stein(sc.TestFunction(lambda x: np.exp(-x), lambda x: -np.exp(-x), 1.0, 1.0))
    err_lin = float(np.max(np.abs(lin.f(w) + 1.0)))
    err_exp = float(np.max(np.abs(ex.f(w) + np.expm1(-w) / (2 * w))))
    ok &= err_lin <= 1e-8 and err_exp <= 1e-8
    stats = {"family": rows, "closed_form_error_linear": err_lin, "closed_form_error_exp": err_exp}
    return dict(experiment="stein-verify", statistics=stats, passed=ok), None


def symbolic_identities() -> dict:
    w = sym.W()
    p11 = sym.NPolynomialExpr.p(1) ** 2
    lap_w = sym.laplacian(w)
    lap_w2 = sym.laplacian(w * w)
    qv = sym.quadratic_variation(w)
    n = sym.NPolynomialExpr.n()
    P2, Pb2 = sym.NPolynomialExpr.p(2), sym.NPolynomialExpr.p(-2)
    expected_w = 2 * n - 2 * n * w
    expected_w2 = -4 * n * w * w - 2 * P2 * p11.conj() - 2 * Pb2 * p11 + 8 * n * w
    fourth = sym.fourth_moment_coefficient()
    return {
        "laplacian_W": lap_w.to_text(),
        "laplacian_W2": lap_w2.to_text(),
        "quadratic_variation_W": qv.to_text(),
        "expected_quadratic_variation_W": sym.expectation(qv).to_text(),
        "fourth_moment_coefficient": fourth.value.to_text(),
        "fourth_moment_cubic_term": fourth.cubic_term.to_text(),
        "fourth_moment_quadratic_term": fourth.quadratic_term.to_text(),
        "fourth_moment_min_n": fourth.min_n,
        "_ok": lap_w == expected_w and lap_w2 == expected_w2 and not fourth.value,
    }


def cmd_symbolic_verify(args):
    stats = symbolic_identities()
    ok = stats.pop("_ok")
    return dict(experiment="symbolic-verify", statistics=stats, passed=ok), None


def cmd_haar_check(args):
    moments = mc.haar_moment_check(args.n, args.count, args.seed, _workers(args))
    ks = mc.invariance_check(args.n, min(args.count, 10_000), args.seed)
    stats = {"moments": moments, "invariance": ks}
    ok = moments["pass"] and ks["pass"]
    return dict(experiment="haar-check", statistics=stats, passed=ok, n=args.n, count=args.count, seed=args.seed), None


def cmd_pair_stats(args):
    s = mc.empirical_pair_stats(args.n, args.t, args.count, args.seed, args.replicas, _workers(args))
    bound = mc.pair_bound(s, args.delta)
    stats = s.as_dict()
    # one-sided: t1 tends to at most sqrt(2)/n as t -> 0
    ok = s.t1 - 4 * s.t1_se <= math.sqrt(2) / args.n
    return (
        dict(experiment="pair-stats", statistics=stats, passed=ok, n=args.n, t=args.t, count=args.count,
             seed=args.seed, bound=bound),
        None,
    )


def cmd_kolmogorov(args):
    batch = mc.sample_w(args.n, args.count, args.seed, _workers(args), power=args.power)
    stats = {"d_k": mc.estimate_dk(batch), "dkw_radius": mc.dkw_radius(args.count), "power": args.power}
    return (
        dict(experiment="kolmogorov", statistics=stats, passed=True, n=args.n, count=args.count, seed=args.seed),
        batch.to_csv(),
    )


def cmd_verify_main2(args):
    rep = mc.verify_main2(args.n, args.count, args.seed, workers=_workers(args))
    batch = rep.pop("batch")
    passed = rep.pop("pass")
    bound = rep.pop("bound")
    return (
        dict(experiment="verify-main2", statistics=rep, passed=passed, n=args.n, count=args.count, seed=args.seed,
             bound=bound),
        batch.to_csv(),
    )


def cmd_lis_check(args):
    rep = mc.lis_cross_check(args.n_perm, args.l, args.count, args.seed, _workers(args))
    passed = rep.pop("pass")
    return dict(experiment="lis-check", statistics=rep, passed=passed, n=args.l, count=args.count, seed=args.seed), None


def cmd_bound_calc(args):
    ps = sc.PairStats(args.a, args.t1, args.mean_gap, args.third, args.remainder)
    if args.delta is None:
        _, rep = sc.optimize_delta(ps)
    else:
        rep = sc.kolmogorov_bound(ps, args.delta)
    A, B = ps.coefficients()
    stats = {"A": A, "B": B, **rep.as_dict()}
    return dict(experiment="bound-calc", statistics=stats, passed=True, bound=rep.bound), None


COMMANDS = {
    "stein-verify": cmd_stein_verify,
    "symbolic-verify": cmd_symbolic_verify,
    "haar-check": cmd_haar_check,
    "pair-stats": cmd_pair_stats,
    "kolmogorov": cmd_kolmogorov,
    "verify-main2": cmd_verify_main2,
    "lis-check": cmd_lis_check,
    "bound-calc": cmd_bound_calc,
}


def _flatten(prefix: str, obj, rows: list) -> None:
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], rows)
    else:
        rows.append((prefix, obj))


def _to_csv(kwargs: dict) -> str:
    rows: list = []
    doc = {k: v for k, v in kwargs.items() if v is not None and k != "passed"}
    doc["pass"] = bool(kwargs["passed"])
    doc["schema"] = mc.SCHEMA_VERSION
    _flatten("", doc, rows)
    return "key,value\n" + "".join(f"{k},{v}\n" for k, v in rows)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        kwargs, samples_csv = COMMANDS[args.command](args)
    except (mc.HypothesisError, sc.ParameterError, ValueError) as exc:
        print(f"stein-exp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.format == "csv":
        text = samples_csv if samples_csv is not None else _to_csv(kwargs)
    else:
        text = mc.experiment_report(**kwargs)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if kwargs["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
