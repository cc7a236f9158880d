"""Head-to-head timing of the two ADMM kernel backends.

Runs the numba-compiled and pure-numpy kernels on identical box QPs and
reports wall time per solve and per iteration.  Each problem is solved
cold once and then re-solved warm along a drifting linear term, which is
the access pattern of a receding-horizon loop.

Usage::

    python3 benchmarks/bench_qp.py
    python3 benchmarks/bench_qp.py --sizes 20,60,150 --repeats 5
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from pimpc.numerics import kernels
from pimpc.numerics.qp import QpSettings


def make_problem(n, rng):
    """Random strictly convex box QP with general rows and active bounds.

    Returns a dict of kernel-ready arrays: Hessian, stacked constraint
    operator (identity over ``n // 2`` random rows), bounds tight enough
    that a fair share of them bind at the optimum.
    """
    M = rng.standard_normal((n, n))
    H = M.T @ M / n + np.eye(n)
    p = n // 2
    G = rng.standard_normal((p, n)) / np.sqrt(n)
    A = np.vstack([np.eye(n), G])
    lo = np.concatenate([np.full(n, -0.5), np.full(p, -1.0)])
    hi = np.concatenate([np.full(n, 0.5), np.full(p, 1.0)])
    g0 = rng.standard_normal(n) * 2.0
    return {
        "H": np.ascontiguousarray(H),
        "A": np.ascontiguousarray(A),
        "At": np.ascontiguousarray(A.T),
        "AtA": np.ascontiguousarray(A.T @ A),
        "lo": lo,
        "hi": hi,
        "g0": g0,
    }


def run_chain(kernel, prob, settings, resolves, rng):
    """Cold solve plus warm re-solves; returns (seconds, iters, x, statuses).

    Mirrors the solver workspace: iterates persist between calls and the
    factorization is rebuilt whenever the kernel rescales the penalty.
    """
    H, A, At, AtA = prob["H"], prob["A"], prob["At"], prob["AtA"]
    lo, hi = prob["lo"], prob["hi"]
    n = H.shape[0]
    m = A.shape[0]
    s = settings
    rho = s.rho

    def factor(r):
        K = H + r * AtA
        K[np.diag_indices_from(K)] += s.sigma
        return np.linalg.cholesky(K)

    Lf = factor(rho)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    np.clip(z, lo, hi, out=z)
    g = prob["g0"].copy()
    drifts = rng.standard_normal((resolves, n)) * 0.05
    iters = 0
    statuses = []
    t0 = time.perf_counter()
    for k in range(resolves + 1):
        it, _, _, rho_out, status = kernel(
            H, g, A, At, AtA, lo, hi, Lf, x, z, y, rho, s.sigma, s.alpha,
            s.eps_abs, s.eps_rel, s.max_iter, s.check_every, s.adaptive_rho)
        if rho_out != rho:
            rho = rho_out
            Lf = factor(rho)
        iters += int(it)
        statuses.append(int(status))
        if k < resolves:
            g = g + drifts[k]
    elapsed = time.perf_counter() - t0
    return elapsed, iters, x.copy(), statuses


def bench_size(n, backends, args):
    rows = []
    for name, kernel in backends:
        per_solve = []
        per_iter = []
        solutions = []
        for rep in range(args.repeats):
            # same seed across backends: identical problems and drifts
            rng = np.random.default_rng(args.seed + 1000 * rep + n)
            prob = make_problem(n, rng)
            secs, iters, x, statuses = run_chain(
                kernel, prob, QpSettings(), args.resolves, rng)
            if any(st != kernels.STATUS_SOLVED for st in statuses):
                print(f"  warning: {name} n={n} rep={rep} hit the "
                      "iteration limit", file=sys.stderr)
            per_solve.append(1e3 * secs / (args.resolves + 1))
            per_iter.append(1e6 * secs / max(iters, 1))
            solutions.append(x)
        rows.append({
            "backend": name,
            "n": n,
            "m": n + n // 2,
            "ms_solve": statistics.median(per_solve),
            "us_iter": statistics.median(per_iter),
            "x": solutions,
        })
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="20,60,150,300",
                        help="comma-separated problem sizes (default %(default)s)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="independent problems per size (default %(default)s)")
    parser.add_argument("--resolves", type=int, default=40,
                        help="warm re-solves per problem (default %(default)s)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    if not sizes or min(sizes) < 2:
        parser.error("--sizes needs integers >= 2")

    backends = [("numpy", kernels.admm_iterate_numpy)]
    if kernels.admm_iterate_numba is not None:
        backends.append(("numba", kernels.admm_iterate_numba))
        # compile outside the timed region
        warm = make_problem(4, np.random.default_rng(0))
        run_chain(kernels.admm_iterate_numba, warm, QpSettings(), 1,
                  np.random.default_rng(0))
    else:
        print("numba unavailable; timing the numpy kernel only",
              file=sys.stderr)

    print(f"selected backend: {kernels.BACKEND}  "
          f"(override with PIMPC_BACKEND=numpy|numba)")
    print(f"{args.repeats} problems per size, 1 cold + {args.resolves} "
          "warm solves each, medians reported")
    print()
    header = f"{'n':>5} {'m':>5} {'backend':>8} {'ms/solve':>10} {'us/iter':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    mismatch = 0
    for n in sizes:
        rows = bench_size(n, backends, args)
        base = rows[0]["ms_solve"]
        for row in rows:
            speed = base / row["ms_solve"] if row["ms_solve"] > 0 else float("inf")
            print(f"{row['n']:>5} {row['m']:>5} {row['backend']:>8} "
                  f"{row['ms_solve']:>10.3f} {row['us_iter']:>9.2f} "
                  f"{speed:>7.2f}x")
        if len(rows) == 2:
            for xa, xb in zip(rows[0]["x"], rows[1]["x"]):
                err = float(np.max(np.abs(xa - xb)))
                if err > 1e-6:
                    mismatch += 1
                    print(f"  warning: backend solutions differ by {err:.2e}",
                          file=sys.stderr)
    print()
    if len(backends) == 2 and mismatch == 0:
        print("backend solutions agree to 1e-6 on every problem")
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())
