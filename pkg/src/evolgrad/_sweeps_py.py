"""Pure-Python SSOR sweeps, same iterates as the compiled kernel.

A forward SSOR half-sweep is the triangular solve
``(D/omega + L) x_new = rhs - (U + (1 - 1/omega) D) x_old`` and the backward
half-sweep the mirror image with ``U``; scipy does the substitution.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular


def _matrix(indptr, indices, data, n):
    return sp.csr_matrix((np.asarray(data, float), np.asarray(indices), np.asarray(indptr)), shape=(n, n))


def residual_max(indptr, indices, data, rhs, x):
    a = _matrix(indptr, indices, data, len(rhs))
    return float(np.max(np.abs(rhs - a @ x), initial=0.0))


def ssor_solve(indptr, indices, data, rhs, x, tol, max_sweeps, omega=1.0):
    n = len(rhs)
    a = _matrix(indptr, indices, data, n)
    diag = a.diagonal()
    d_scaled = sp.diags(diag / omega, format="csr")
    d_rest = sp.diags((1.0 - 1.0 / omega) * diag, format="csr")
    lower = sp.tril(a, -1, format="csr")
    upper = sp.triu(a, 1, format="csr")
    fwd = (lower + d_scaled).tocsr()
    bwd = (upper + d_scaled).tocsr()
    fwd_rest = upper + d_rest
    bwd_rest = lower + d_rest
    res = float(np.max(np.abs(rhs - a @ x), initial=0.0))
    sweeps = 0
    while res > tol and sweeps < max_sweeps:
        x[:] = spsolve_triangular(fwd, rhs - fwd_rest @ x, lower=True)
        x[:] = spsolve_triangular(bwd, rhs - bwd_rest @ x, lower=False)
        sweeps += 1
        res = float(np.max(np.abs(rhs - a @ x), initial=0.0))
    return sweeps, res
