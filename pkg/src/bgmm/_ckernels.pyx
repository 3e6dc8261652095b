# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner-loop kernels.

Every function here has a numpy twin in :mod:`bgmm._pykernels` with the same
signature; :mod:`bgmm.kernels` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def linear_iv_moment_matrix(const double[::1] y, const double[::1] x,
                            const double[:, ::1] Z, double gamma):
    cdef Py_ssize_t n_obs = Z.shape[0], n_inst = Z.shape[1], n, k
    cdef double r
    out = np.empty((n_obs, n_inst), dtype=np.float64)
    cdef double[:, ::1] M = out
    for n in range(n_obs):
        r = y[n] - gamma * x[n]
        for k in range(n_inst):
            M[n, k] = r * Z[n, k]
    return out


def linear_iv_moment_mean(const double[::1] y, const double[::1] x,
                          const double[:, ::1] Z, double gamma):
    cdef Py_ssize_t n_obs = Z.shape[0], n_inst = Z.shape[1], n, k
    cdef double r
    out = np.zeros(n_inst, dtype=np.float64)
    cdef double[::1] m = out
    for n in range(n_obs):
        r = y[n] - gamma * x[n]
        for k in range(n_inst):
            m[k] += r * Z[n, k]
    for k in range(n_inst):
        m[k] /= n_obs
    return out


def quad_form(const double[:, ::1] W, const double[::1] v):
    """Return v'Wv, exploiting symmetry of W."""
    cdef Py_ssize_t K = W.shape[0], i, j
    cdef double total = 0.0, row
    for i in range(K):
        row = 0.0
        for j in range(i):
            row += W[i, j] * v[j]
        total += v[i] * (2.0 * row + W[i, i] * v[i])
    return total


def chol_rank1_update(double[:, ::1] L, double[::1] v, int sign):
    """In-place rank-one update (sign=+1) or downdate (sign=-1) of a lower
    Cholesky factor, so that L L' becomes L L' + sign * v v'.

    Returns False, leaving L partially modified, when a downdate would lose
    positive definiteness. ``v`` is overwritten.
    """
    cdef Py_ssize_t p = L.shape[0], k, i
    cdef double d, r2, r, c, s
    for k in range(p):
        d = L[k, k]
        r2 = d * d + sign * v[k] * v[k]
        if r2 <= 0.0:
            return False
        r = sqrt(r2)
        c = r / d
        s = v[k] / d
        L[k, k] = r
        for i in range(k + 1, p):
            L[i, k] = (L[i, k] + sign * s * v[i]) / c
            v[i] = c * v[i] - s * L[i, k]
    return True
