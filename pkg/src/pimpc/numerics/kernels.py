"""ADMM inner-loop kernels.

The operator-splitting QP iteration is the hot path of every closed-loop
run, so it exists twice with one calling convention: a numba-compiled
version and a pure-numpy fallback.  Selection happens at import time via
the ``PIMPC_BACKEND`` environment variable (``numba`` | ``numpy``); the
default is numba when importable.  ``benchmarks/bench_qp.py`` times both.

Kernel contract (shared by both backends)::

    admm_iterate(P, q, A, At, AtA, lo, hi, Lf, x, z, y, rho, sigma, alpha,
                 eps_abs, eps_rel, max_iter, check_every, adaptive_rho)
      -> (iterations, r_prim, r_dual, rho_final, status)

``x, z, y`` are updated in place.  ``Lf`` is the lower Cholesky factor of
``P + sigma*I + rho*A'A``; the kernel refactors internally when it rescales
``rho``.  Status: 0 solved, 1 iteration limit, 2 primal infeasibility
certificate found.
"""

from __future__ import annotations

import math
import os

import numpy as np
import scipy.linalg

STATUS_SOLVED = 0
STATUS_MAX_ITER = 1
STATUS_INFEASIBLE = 2

_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_PINF_TOL = 1e-9


def _admm_numpy(P, q, A, At, AtA, lo, hi, Lf, x, z, y, rho, sigma, alpha,
                eps_abs, eps_rel, max_iter, check_every, adaptive_rho):
    n = x.shape[0]
    r_prim = np.inf
    r_dual = np.inf
    status = STATUS_MAX_ITER
    it_done = 0
    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        it_done = it
        rhs = sigma * x - q + At @ (rho * z - y)
        xt = scipy.linalg.cho_solve((Lf, True), rhs, check_finite=False)
        zt = A @ xt
        x *= (1.0 - alpha)
        x += alpha * xt
        v = alpha * zt + (1.0 - alpha) * z + y / rho
        np.clip(v, lo, hi, out=z)
        np.multiply(v - z, rho, out=y)
        if it % check_every == 0 or it == max_iter:
            Ax = A @ x
            Px = P @ x
            Aty = At @ y
            r_prim = float(np.max(np.abs(Ax - z))) if z.size else 0.0
            r_dual = float(np.max(np.abs(Px + q + Aty)))
            s_prim = max(float(np.max(np.abs(Ax))), float(np.max(np.abs(z)))) if z.size else 0.0
            s_dual = max(float(np.max(np.abs(Px))), float(np.max(np.abs(Aty))),
                         float(np.max(np.abs(q))))
            if r_prim <= eps_abs + eps_rel * s_prim and r_dual <= eps_abs + eps_rel * s_dual:
                status = STATUS_SOLVED
                break
            dy = y - y_prev
            ndy = float(np.max(np.abs(dy))) if dy.size else 0.0
            if ndy > 1e-14:
                cert = float(np.max(np.abs(At @ dy)))
                support = 0.0
                for i in range(dy.shape[0]):
                    if dy[i] > 0.0:
                        support += hi[i] * dy[i]
                    elif dy[i] < 0.0:
                        support += lo[i] * dy[i]
                if cert <= _PINF_TOL * ndy and support < -_PINF_TOL * ndy:
                    status = STATUS_INFEASIBLE
                    break
            y_prev = y.copy()
            if adaptive_rho:
                num = r_prim / max(s_prim, 1e-30)
                den = r_dual / max(s_dual, 1e-30)
                ratio = math.sqrt(num / max(den, 1e-30))
                if ratio > 5.0 or ratio < 0.2:
                    rho = min(max(rho * ratio, _RHO_MIN), _RHO_MAX)
                    K = P + rho * AtA
                    K[np.diag_indices_from(K)] += sigma
                    Lf = np.linalg.cholesky(K)
    return it_done, r_prim, r_dual, rho, status


def _make_numba_kernel():
    from numba import njit

    @njit(cache=True, inline="always")
    def _mv(M, v, out):
        m, n = M.shape
        for i in range(m):
            s = 0.0
            for j in range(n):
                s += M[i, j] * v[j]
            out[i] = s

    @njit(cache=True, inline="always")
    def _chol_solve(L, b, out):
        n = L.shape[0]
        for i in range(n):
            s = b[i]
            for j in range(i):
                s -= L[i, j] * out[j]
            out[i] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = out[i]
            for j in range(i + 1, n):
                s -= L[j, i] * out[j]
            out[i] = s / L[i, i]

    @njit(cache=True)
    def _admm_numba(P, q, A, At, AtA, lo, hi, Lf, x, z, y, rho, sigma, alpha,
                    eps_abs, eps_rel, max_iter, check_every, adaptive_rho):
        n = x.shape[0]
        m = z.shape[0]
        rhs = np.empty(n)
        xt = np.empty(n)
        zt = np.empty(m)
        w = np.empty(m)
        Ax = np.empty(m)
        Px = np.empty(n)
        Aty = np.empty(n)
        y_prev = y.copy()
        r_prim = np.inf
        r_dual = np.inf
        status = STATUS_MAX_ITER
        it_done = 0
        for it in range(1, max_iter + 1):
            it_done = it
            for i in range(m):
                w[i] = rho * z[i] - y[i]
            _mv(At, w, rhs)
            for i in range(n):
                rhs[i] += sigma * x[i] - q[i]
            _chol_solve(Lf, rhs, xt)
            _mv(A, xt, zt)
            for i in range(n):
                x[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
            for i in range(m):
                v = alpha * zt[i] + (1.0 - alpha) * z[i] + y[i] / rho
                zi = v
                if zi < lo[i]:
                    zi = lo[i]
                elif zi > hi[i]:
                    zi = hi[i]
                y[i] = rho * (v - zi)
                z[i] = zi
            if it % check_every == 0 or it == max_iter:
                _mv(A, x, Ax)
                _mv(P, x, Px)
                _mv(At, y, Aty)
                r_prim = 0.0
                s_ax = 0.0
                s_z = 0.0
                for i in range(m):
                    d = abs(Ax[i] - z[i])
                    if d > r_prim:
                        r_prim = d
                    a = abs(Ax[i])
                    if a > s_ax:
                        s_ax = a
                    a = abs(z[i])
                    if a > s_z:
                        s_z = a
                r_dual = 0.0
                s_px = 0.0
                s_aty = 0.0
                s_q = 0.0
                for i in range(n):
                    d = abs(Px[i] + q[i] + Aty[i])
                    if d > r_dual:
                        r_dual = d
                    a = abs(Px[i])
                    if a > s_px:
                        s_px = a
                    a = abs(Aty[i])
                    if a > s_aty:
                        s_aty = a
                    a = abs(q[i])
                    if a > s_q:
                        s_q = a
                s_prim = s_ax if s_ax > s_z else s_z
                s_dual = s_px
                if s_aty > s_dual:
                    s_dual = s_aty
                if s_q > s_dual:
                    s_dual = s_q
                if (r_prim <= eps_abs + eps_rel * s_prim
                        and r_dual <= eps_abs + eps_rel * s_dual):
                    status = STATUS_SOLVED
                    break
                ndy = 0.0
                for i in range(m):
                    a = abs(y[i] - y_prev[i])
                    if a > ndy:
                        ndy = a
                if ndy > 1e-14:
                    cert = 0.0
                    for j in range(n):
                        s = 0.0
                        for i in range(m):
                            s += At[j, i] * (y[i] - y_prev[i])
                        a = abs(s)
                        if a > cert:
                            cert = a
                    support = 0.0
                    for i in range(m):
                        dyi = y[i] - y_prev[i]
                        if dyi > 0.0:
                            support += hi[i] * dyi
                        elif dyi < 0.0:
                            support += lo[i] * dyi
                    if cert <= _PINF_TOL * ndy and support < -_PINF_TOL * ndy:
                        status = STATUS_INFEASIBLE
                        break
                for i in range(m):
                    y_prev[i] = y[i]
                if adaptive_rho:
                    num = r_prim / max(s_prim, 1e-30)
                    den = r_dual / max(s_dual, 1e-30)
                    ratio = math.sqrt(num / max(den, 1e-30))
                    if ratio > 5.0 or ratio < 0.2:
                        rho_new = rho * ratio
                        if rho_new < _RHO_MIN:
                            rho_new = _RHO_MIN
                        elif rho_new > _RHO_MAX:
                            rho_new = _RHO_MAX
                        rho = rho_new
                        K = P + rho * AtA
                        for i in range(n):
                            K[i, i] += sigma
                        Lf = np.linalg.cholesky(K)
        return it_done, r_prim, r_dual, rho, status

    return _admm_numba


def _select_backend() -> tuple[str, object]:
    requested = os.environ.get("PIMPC_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"PIMPC_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba":
        try:
            return "numba", _make_numba_kernel()
        except ImportError:
            return "numpy", _admm_numpy
    return "numpy", _admm_numpy


admm_iterate_numpy = _admm_numpy
try:
    admm_iterate_numba = _make_numba_kernel()
except ImportError:  # pragma: no cover - numba is a declared dependency
    admm_iterate_numba = None

BACKEND, admm_iterate = _select_backend()
