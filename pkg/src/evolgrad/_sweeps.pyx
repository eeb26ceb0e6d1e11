# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled symmetric Gauss-Seidel (SSOR) sweeps on CSR matrices."""

from libc.math cimport fabs

import numpy as np


cdef double _residual_max(const Py_ssize_t[::1] indptr, const int[::1] indices,
                          const double[::1] data, const double[::1] rhs,
                          const double[::1] x) noexcept nogil:
    cdef Py_ssize_t n = rhs.shape[0]
    cdef Py_ssize_t i, p
    cdef double acc, worst = 0.0
    for i in range(n):
        acc = rhs[i]
        for p in range(indptr[i], indptr[i + 1]):
            acc -= data[p] * x[indices[p]]
        if fabs(acc) > worst:
            worst = fabs(acc)
    return worst


cdef void _sweep(const Py_ssize_t[::1] indptr, const int[::1] indices,
                 const double[::1] data, const double[::1] rhs,
                 double[::1] x, double omega, bint forward) noexcept nogil:
    cdef Py_ssize_t n = rhs.shape[0]
    cdef Py_ssize_t k, i, p, j
    cdef double acc, diag
    for k in range(n):
        i = k if forward else n - 1 - k
        acc = rhs[i]
        diag = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                diag = data[p]
            else:
                acc -= data[p] * x[j]
        x[i] = (1.0 - omega) * x[i] + omega * acc / diag


def residual_max(indptr, indices, data, rhs, x):
    """max_i |rhs - A x|_i for a CSR matrix A."""
    cdef const Py_ssize_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.intp)
    cdef const int[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef const double[::1] dv = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    return _residual_max(ip, ix, dv, bv, xv)


def ssor_solve(indptr, indices, data, rhs, double[::1] x, double tol, int max_sweeps, double omega=1.0):
    """Symmetric Gauss-Seidel/SSOR on ``A x = rhs``, updating ``x`` in place.

    One sweep is a forward pass followed by a backward pass.  Stops when
    ``max|rhs - A x| <= tol``.  Returns ``(sweeps, residual)``.
    """
    cdef const Py_ssize_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.intp)
    cdef const int[::1] ix = np.ascontiguousarray(indices, dtype=np.int32)
    cdef const double[::1] dv = np.ascontiguousarray(data, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef double res
    cdef int sweeps = 0
    with nogil:
        res = _residual_max(ip, ix, dv, bv, x)
        while res > tol and sweeps < max_sweeps:
            _sweep(ip, ix, dv, bv, x, omega, True)
            _sweep(ip, ix, dv, bv, x, omega, False)
            sweeps += 1
            res = _residual_max(ip, ix, dv, bv, x)
    return sweeps, res
