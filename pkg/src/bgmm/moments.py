"""Moment-condition models, moment matrices and the 2SLS initializer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from bgmm import kernels


class NumericalError(RuntimeError):
    """A numerical step failed; callers mark the run failed."""

    reason = "numerical"


class MomentEvaluationError(NumericalError, ValueError):
    pass


class InitializerError(NumericalError):
    """2SLS projection is degenerate; callers fall back to zero."""


@dataclass(frozen=True)
class Dataset:
    """Linear-IV data: response ``y``, endogenous ``x``, instruments ``Z``."""

    y: np.ndarray
    x: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64).reshape(-1)
        x = np.ascontiguousarray(self.x, dtype=np.float64).reshape(-1)
        Z = np.asarray(self.Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        Z = np.ascontiguousarray(Z)
        if Z.ndim != 2 or Z.shape[1] < 1:
            raise ValueError("Z must be a 2-d array with at least one column")
        n = y.shape[0]
        if n < 2 or x.shape[0] != n or Z.shape[0] != n:
            raise ValueError(
                f"y, x and Z must share a row count >= 2 (got {n}, {x.shape[0]}, {Z.shape[0]})"
            )
        for name, arr in (("y", y), ("x", x), ("Z", Z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "Z", Z)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_instruments(self) -> int:
        return self.Z.shape[1]

    def take(self, rows) -> "Dataset":
        return Dataset(self.y[rows], self.x[rows], self.Z[rows])


class MomentModel:
    """Maps (data row, parameter) to a K-vector of moment conditions.

    Subclasses override :meth:`row`, and may override :meth:`matrix` and
    :meth:`mean` with vectorized versions.
    """

    param_dim: int
    moment_dim: int

    def row(self, data: Dataset, n: int, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        return np.array([self.row(data, n, theta) for n in range(data.n_obs)], dtype=np.float64)

    def mean(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        return moment_mean(self.matrix(data, theta))


class FunctionMomentModel(MomentModel):
    """Moment model built from a per-row callable ``f(data, n, theta)``."""

    def __init__(self, func: Callable[[Dataset, int, np.ndarray], np.ndarray],
                 param_dim: int, moment_dim: int):
        if param_dim < 1 or moment_dim < 1:
            raise ValueError("param_dim and moment_dim must be positive")
        self._func = func
        self.param_dim = param_dim
        self.moment_dim = moment_dim

    def row(self, data, n, theta):
        return np.asarray(self._func(data, n, theta), dtype=np.float64).reshape(-1)


class LinearIVModel(MomentModel):
    """m_n(gamma) = (y_n - gamma * x_n) * z_n with a scalar coefficient."""

    param_dim = 1

    def __init__(self, moment_dim: int):
        if moment_dim < 1:
            raise ValueError("moment_dim must be positive")
        self.moment_dim = moment_dim

    @classmethod
    def for_data(cls, data: Dataset) -> "LinearIVModel":
        return cls(data.n_instruments)

    def row(self, data, n, theta):
        return (data.y[n] - theta[0] * data.x[n]) * data.Z[n]

    def matrix(self, data, theta):
        return kernels.linear_iv_moment_matrix(data.y, data.x, data.Z, float(theta[0]))

    def mean(self, data, theta):
        return kernels.linear_iv_moment_mean(data.y, data.x, data.Z, float(theta[0]))


def _check_theta(model: MomentModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != model.param_dim:
        raise ValueError(f"theta has length {theta.shape[0]}, model expects {model.param_dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta


def _check_moments(model: MomentModel, out: np.ndarray, n_obs: int) -> np.ndarray:
    if out.shape != (n_obs, model.moment_dim):
        raise MomentEvaluationError(
            f"evaluator returned shape {out.shape}, expected {(n_obs, model.moment_dim)}"
        )
    if not np.all(np.isfinite(out)):
        raise MomentEvaluationError("moment evaluator produced non-finite values")
    return out


def moment_matrix(model: MomentModel, data: Dataset, theta) -> np.ndarray:
    """Return the N x K matrix whose n-th row is m_n(theta)."""
    theta = _check_theta(model, theta)
    out = np.asarray(model.matrix(data, theta), dtype=np.float64)
    return _check_moments(model, out, data.n_obs)


def moment_mean(M: np.ndarray) -> np.ndarray:
    """Column means of a moment matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] == 0:
        raise ValueError("moment matrix must be 2-d with at least one row")
    return M.mean(axis=0)


def tsls_estimate(data: Dataset) -> float:
    """Two-stage least squares estimate of the coefficient on ``x``.

    The first stage projects ``x`` on the column space of ``Z`` via a
    least-squares solve, so rank-deficient instruments are handled as a
    pseudo-inverse projection.

    Raises
    ------
    InitializerError
        If the projected regressor is numerically zero.
    """
    coef, *_ = np.linalg.lstsq(data.Z, data.x, rcond=None)
    xhat = data.Z @ coef
    denom = float(xhat @ xhat)
    scale = float(data.x @ data.x)
    if not np.isfinite(denom) or denom <= 1e-12 * max(scale, np.finfo(float).tiny):
        raise InitializerError("projected regressor is degenerate")
    return float(xhat @ data.y) / denom
