"""Backend selection for the inner-loop kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``BGMM_BACKEND=python`` is set, the numpy fallback is
used. Both expose the same four functions and take C-contiguous float64
arrays.
"""

import os

from bgmm import _pykernels

python_backend = _pykernels

if os.environ.get("BGMM_BACKEND", "").lower() == "python":
    _impl = _pykernels
    compiled_backend = None
else:
    try:
        from bgmm import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels
    compiled_backend = _impl if _impl is not _pykernels else None

BACKEND = "cython" if _impl is not _pykernels else "python"

linear_iv_moment_matrix = _impl.linear_iv_moment_matrix
linear_iv_moment_mean = _impl.linear_iv_moment_mean
quad_form = _impl.quad_form
chol_rank1_update = _impl.chol_rank1_update

__all__ = [
    "BACKEND",
    "chol_rank1_update",
    "compiled_backend",
    "linear_iv_moment_matrix",
    "linear_iv_moment_mean",
    "python_backend",
    "quad_form",
]
