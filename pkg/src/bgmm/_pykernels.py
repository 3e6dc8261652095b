"""Pure-numpy fallback for the compiled kernels in ``_ckernels.pyx``."""

import math

import numpy as np


def linear_iv_moment_matrix(y, x, Z, gamma):
    return (y - gamma * x)[:, None] * Z


def linear_iv_moment_mean(y, x, Z, gamma):
    return Z.T @ (y - gamma * x) / Z.shape[0]


def quad_form(W, v):
    """Return v'Wv."""
    return float(v @ W @ v)


def chol_rank1_update(L, v, sign):
    """In-place rank-one up/downdate of a lower Cholesky factor.

    ``L L'`` becomes ``L L' + sign * v v'``. Returns False when a downdate
    would lose positive definiteness. ``v`` is overwritten.
    """
    p = L.shape[0]
    for k in range(p):
        d = L[k, k]
        r2 = d * d + sign * v[k] * v[k]
        if r2 <= 0.0:
            return False
        r = math.sqrt(r2)
        c = r / d
        s = v[k] / d
        L[k, k] = r
        if k + 1 < p:
            L[k + 1:, k] = (L[k + 1:, k] + sign * s * v[k + 1:]) / c
            v[k + 1:] = c * v[k + 1:] - s * L[k + 1:, k]
    return True
