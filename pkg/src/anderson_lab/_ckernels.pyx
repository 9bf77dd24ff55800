# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Dirichlet stencil action and tridiagonal Sturm counts.

Both functions mirror :mod:`anderson_lab._pykernels` exactly; the selector in
:mod:`anderson_lab.kernels` decides which one is used.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def stencil_matvec(const double[::1] diag, const double[::1] u, double inv_a2,
                   int d, int n, double[::1] out=None):
    """out = diag * u - inv_a2 * (sum of nearest neighbours), zero outside the box."""
    cdef Py_ssize_t N = u.shape[0]
    cdef Py_ssize_t i, j, k, idx, s1, s2
    cdef double acc
    if out is None:
        out = np.empty(N, dtype=np.float64)
    if d == 1:
        for i in range(n):
            acc = 0.0
            if i > 0:
                acc += u[i - 1]
            if i < n - 1:
                acc += u[i + 1]
            out[i] = diag[i] * u[i] - inv_a2 * acc
    elif d == 2:
        s1 = n
        for i in range(n):
            for j in range(n):
                idx = i * s1 + j
                acc = 0.0
                if i > 0:
                    acc += u[idx - s1]
                if i < n - 1:
                    acc += u[idx + s1]
                if j > 0:
                    acc += u[idx - 1]
                if j < n - 1:
                    acc += u[idx + 1]
                out[idx] = diag[idx] * u[idx] - inv_a2 * acc
    elif d == 3:
        s1 = n * n
        s2 = n
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    idx = i * s1 + j * s2 + k
                    acc = 0.0
                    if i > 0:
                        acc += u[idx - s1]
                    if i < n - 1:
                        acc += u[idx + s1]
                    if j > 0:
                        acc += u[idx - s2]
                    if j < n - 1:
                        acc += u[idx + s2]
                    if k > 0:
                        acc += u[idx - 1]
                    if k < n - 1:
                        acc += u[idx + 1]
                    out[idx] = diag[idx] * u[idx] - inv_a2 * acc
    else:
        raise ValueError("d must be 1, 2 or 3")
    return np.asarray(out)


def sturm_count(const double[::1] diag, double off, double x):
    """Number of eigenvalues < x of the symmetric tridiagonal matrix (diag, off)."""
    cdef Py_ssize_t i, N = diag.shape[0]
    cdef long count = 0
    cdef double q = 0.0
    cdef double off2 = off * off
    cdef double tiny = 1e-300
    for i in range(N):
        if i == 0:
            q = diag[0] - x
        else:
            if q == 0.0:
                q = tiny
            q = diag[i] - x - off2 / q
        if q < 0.0:
            count += 1
    return count
