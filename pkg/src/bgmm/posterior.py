"""GMM quasi-likelihood and Metropolis-Hastings log-ratios.

All densities are handled on the log scale and only up to the normalizing
constant of the quasi-posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from bgmm import kernels
from bgmm.moments import Dataset, LinearIVModel, MomentModel, NumericalError, moment_matrix
from bgmm.weighting import WeightingMatrix


def flat_log_prior(theta: np.ndarray) -> float:
    return 0.0


def gmm_quadratic(mbar: np.ndarray, W: WeightingMatrix | np.ndarray) -> float:
    """m'Wm for a mean moment vector ``m``."""
    Wm = W.W if isinstance(W, WeightingMatrix) else np.asarray(W, dtype=np.float64)
    mbar = np.ascontiguousarray(mbar, dtype=np.float64)
    if Wm.shape != (mbar.shape[0], mbar.shape[0]):
        raise ValueError(f"weighting matrix {Wm.shape} does not match moment length {mbar.shape[0]}")
    return kernels.quad_form(np.ascontiguousarray(Wm), mbar)


@dataclass
class QuasiPosterior:
    """Quasi-likelihood exp(-N/2 m(theta)'W m(theta)) times a prior."""

    model: MomentModel
    data: Dataset
    log_prior: Callable[[np.ndarray], float] = field(default=flat_log_prior)

    def __post_init__(self):
        if isinstance(self.model, LinearIVModel) and self.model.moment_dim != self.data.n_instruments:
            raise ValueError("model moment_dim does not match the number of instruments")

    @property
    def n_obs(self) -> int:
        return self.data.n_obs

    @property
    def param_dim(self) -> int:
        return self.model.param_dim

    @property
    def moment_dim(self) -> int:
        return self.model.moment_dim

    def moments(self, theta) -> np.ndarray:
        return moment_matrix(self.model, self.data, theta)

    def moment_mean(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        mbar = np.asarray(self.model.mean(self.data, theta), dtype=np.float64)
        if not np.all(np.isfinite(mbar)):
            raise NumericalError("non-finite moment mean")
        return mbar

    def quadratic(self, theta, W: WeightingMatrix) -> float:
        return gmm_quadratic(self.moment_mean(theta), W)

    def log_quasi_likelihood(self, theta, W: WeightingMatrix) -> float:
        """-(K/2) log(2 pi / N) + (1/2) log det W - (N/2) Q(theta, W)."""
        if W.log_det is None:
            raise NumericalError("log-determinant of the weighting matrix is undefined")
        K, N = self.moment_dim, self.n_obs
        return (-0.5 * K * math.log(2.0 * math.pi / N) + 0.5 * W.log_det
                - 0.5 * N * self.quadratic(theta, W))

    def log_ratio_fixed(self, theta_new, theta, W: WeightingMatrix) -> float:
        """MH log-ratio with a weighting matrix common to both states."""
        return self.log_ratio_from_quadratics(
            self.quadratic(theta_new, W), self.quadratic(theta, W), theta_new, theta)

    def log_ratio_from_quadratics(self, q_new: float, q_old: float, theta_new, theta) -> float:
        return (-0.5 * self.n_obs * (q_new - q_old)
                + self.log_prior(theta_new) - self.log_prior(theta))

    def log_ratio_concurrent(self, theta_new, theta, W_new: WeightingMatrix,
                             W_old: WeightingMatrix) -> float:
        """MH log-ratio when each state carries its own weighting matrix."""
        return log_ratio_concurrent(
            self.n_obs, self.quadratic(theta_new, W_new), self.quadratic(theta, W_old),
            W_new.log_det, W_old.log_det,
            self.log_prior(theta_new) - self.log_prior(theta))

    def log_ratio_stochastic(self, theta_new, theta, W_old: WeightingMatrix) -> float:
        """Coordinate-wise MH log-ratio; W is evaluated at the pre-update state."""
        diff = np.flatnonzero(np.asarray(theta_new) != np.asarray(theta))
        if diff.size > 1:
            raise ValueError("stochastic update must change a single coordinate")
        return self.log_ratio_fixed(theta_new, theta, W_old)


def log_ratio_concurrent(n_obs: int, q_new: float, q_old: float, log_det_new, log_det_old,
                         log_prior_diff: float = 0.0) -> float:
    if log_det_new is None or log_det_old is None:
        raise NumericalError("log-determinant of the weighting matrix is undefined")
    return (0.5 * (log_det_new - log_det_old) - 0.5 * n_obs * (q_new - q_old)
            + log_prior_diff)


def acceptance_probability(log_ratio: float) -> float:
    if math.isnan(log_ratio):
        return 0.0
    return 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)
