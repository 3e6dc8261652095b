"""Weighting-matrix estimators for the GMM criterion.

Three estimators of the precision of the moment conditions are provided:
the plain inverse of the uncentered second-moment matrix, its Moore-Penrose
pseudo-inverse, and the nonparametric eigenvalue-regularized (NER)
estimator, which takes an eigenbasis from one part of a row split and the
variances along it from the other part, averaged over random row
permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from bgmm.moments import NumericalError

KINDS = ("standard", "pinv", "ner")

_UNSET = object()


class SingularWeightingError(NumericalError):
    """Second-moment matrix is singular or too ill-conditioned to invert."""


@dataclass(frozen=True)
class WeightingSpec:
    """Which estimator to use and its tuning.

    ``n_star`` defaults to ``round(0.6 * N)`` when left as None. The split
    location and permutation count are ignored by the non-NER estimators.
    """

    kind: str = "ner"
    n_star: int | None = None
    n_permutations: int = 50
    eigen_floor: float = 1e-10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weighting kind {self.kind!r}; expected one of {KINDS}")
        if self.n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")
        if self.eigen_floor < 0:
            raise ValueError("eigen_floor must be >= 0")

    def split_for(self, n_obs: int) -> int:
        n_star = default_split(n_obs) if self.n_star is None else int(self.n_star)
        if not 2 <= n_star <= n_obs - 2:
            raise ValueError(f"n_star={n_star} outside [2, {n_obs - 2}] for N={n_obs}")
        return n_star


class WeightingMatrix:
    """A symmetric PSD K x K weighting matrix and its log-determinant.

    ``log_det`` is None when the matrix is singular. When not supplied it
    is computed on first access.
    """

    def __init__(self, W: np.ndarray, log_det=_UNSET):
        self.W = np.ascontiguousarray(W, dtype=np.float64)
        if log_det is not _UNSET:
            self.__dict__["log_det"] = log_det

    @cached_property
    def log_det(self) -> float | None:
        sign, value = np.linalg.slogdet(self.W)
        if sign <= 0 or not np.isfinite(value):
            return None
        return float(value)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "WeightingMatrix":
        return cls(np.eye(dim), 0.0)

    def __repr__(self):
        return f"WeightingMatrix(dim={self.dim})"


def default_split(n_obs: int) -> int:
    return int(math.floor(0.6 * n_obs + 0.5))


def second_moment(M: np.ndarray) -> np.ndarray:
    """Uncentered second-moment matrix N^-1 M'M."""
    return (M.T @ M) / M.shape[0]


def standard_precision(M: np.ndarray, max_condition: float = 1e12) -> WeightingMatrix:
    """Inverse of N^-1 M'M.

    Raises
    ------
    SingularWeightingError
        If the smallest eigenvalue is not positive or the condition number
        exceeds ``max_condition``.
    """
    S = second_moment(np.asarray(M, dtype=np.float64))
    try:
        evals, evecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise SingularWeightingError(str(exc)) from exc
    lo, hi = evals[0], evals[-1]
    if not (lo > 0.0) or hi / lo > max_condition:
        raise SingularWeightingError(
            f"second-moment matrix is singular (eigenvalues in [{lo:.3g}, {hi:.3g}])"
        )
    W = (evecs / evals) @ evecs.T
    W = 0.5 * (W + W.T)
    return WeightingMatrix(W, -float(np.sum(np.log(evals))))


def pseudo_precision(M: np.ndarray) -> WeightingMatrix:
    """Moore-Penrose pseudo-inverse of N^-1 M'M; log_det None below full rank."""
    S = second_moment(np.asarray(M, dtype=np.float64))
    evals, evecs = np.linalg.eigh(S)
    tol = max(S.shape) * np.finfo(float).eps * max(abs(evals[-1]), 0.0)
    keep = evals > tol
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / evals[keep]
    W = (evecs * inv) @ evecs.T
    W = 0.5 * (W + W.T)
    log_det = -float(np.sum(np.log(evals))) if keep.all() else None
    return WeightingMatrix(W, log_det)


def subsample_covariances(M: np.ndarray, n_star: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-moment matrices of rows ``[:n_star]`` and ``[n_star:]``."""
    M = np.asarray(M, dtype=np.float64)
    n_obs = M.shape[0]
    if not 1 <= n_star <= n_obs - 1:
        raise ValueError(f"split {n_star} outside [1, {n_obs - 1}]")
    return second_moment(M[:n_star]), second_moment(M[n_star:])


def _ner_parts(M: np.ndarray, n_star: int):
    """Eigenbasis of the first block (descending order) and the second
    block's variances along it."""
    M1, M2 = M[:n_star], M[n_star:]
    S1 = second_moment(M1)
    try:
        _, P = np.linalg.eigh(S1)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    P = P[:, ::-1]
    proj = M2 @ P
    d = np.einsum("ij,ij->j", proj, proj) / M2.shape[0]
    # trace of the second block's second moment
    trace2 = float(np.einsum("ij,ij->", M2, M2)) / M2.shape[0]
    return P, d, trace2


def ner_single_split(M: np.ndarray, n_star: int, eigen_floor: float = 1e-10) -> WeightingMatrix:
    """NER precision from one row split.

    W = P1 diag(1 / d) P1', where P1 are the eigenvectors of the first
    block's second moment and d_k = p_k' S2 p_k, floored at
    ``eigen_floor * tr(S2) / K``.
    """
    M = np.asarray(M, dtype=np.float64)
    n_obs, K = M.shape
    if not 1 <= n_star <= n_obs - 1:
        raise ValueError(f"split {n_star} outside [1, {n_obs - 1}]")
    P, d, trace2 = _ner_parts(M, n_star)
    d = np.maximum(d, eigen_floor * trace2 / K)
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise NumericalError("NER diagonal has non-positive entries")
    W = (P / d) @ P.T
    W = 0.5 * (W + W.T)
    return WeightingMatrix(W, -float(np.sum(np.log(d))))


def _permutations(rng, n_obs: int, count: int):
    for _ in range(count):
        yield np.arange(n_obs) if rng is None else rng.permutation(n_obs)


def ner_precision(M: np.ndarray, spec: WeightingSpec, rng) -> WeightingMatrix:
    """NER precision averaged over ``spec.n_permutations`` row permutations.

    ``rng`` is a :class:`numpy.random.Generator`; passing None uses the
    identity permutation each time.
    """
    M = np.asarray(M, dtype=np.float64)
    n_obs, K = M.shape
    n_star = spec.split_for(n_obs)
    acc = np.zeros((K, K))
    for perm in _permutations(rng, n_obs, spec.n_permutations):
        acc += ner_single_split(M[perm], n_star, spec.eigen_floor).W
    acc /= spec.n_permutations
    return WeightingMatrix(acc)


def split_criterion(M: np.ndarray, n_star: int, n_permutations: int, rng) -> float:
    """Squared Frobenius norm of the summed (NER covariance - S2) gaps.

    The covariance form P1 diag(d) P1' is used, without flooring.
    """
    M = np.asarray(M, dtype=np.float64)
    n_obs, K = M.shape
    if not 1 <= n_star <= n_obs - 1:
        raise ValueError(f"split {n_star} outside [1, {n_obs - 1}]")
    acc = np.zeros((K, K))
    for perm in _permutations(rng, n_obs, n_permutations):
        Mp = M[perm]
        P, d, _ = _ner_parts(Mp, n_star)
        S2 = second_moment(Mp[n_star:])
        acc += (P * d) @ P.T - S2
    return float(np.sum(acc * acc))


def candidate_grid(n_obs: int) -> list[int]:
    """Split-location candidates {2 sqrt(N), 0.2N, ..., N - 1.5 sqrt(N)}.

    Square-root entries are floored and proportional entries rounded to the
    nearest integer; this reproduces the published values 28, 164 and 178
    at N = 200. Entries are clipped to [2, N - 2] and de-duplicated in
    order.
    """
    if n_obs < 16:
        raise ValueError("candidate grid needs N >= 16")
    root = math.sqrt(n_obs)
    raw = [
        math.floor(2 * root),
        *(math.floor(f * n_obs + 0.5) for f in (0.2, 0.4, 0.6, 0.8)),
        math.floor(n_obs - 2.5 * root),
        math.floor(n_obs - 1.5 * root),
    ]
    out: list[int] = []
    for v in raw:
        v = min(max(int(v), 2), n_obs - 2)
        if v not in out:
            out.append(v)
    return out


def build_weighting(M: np.ndarray, spec: WeightingSpec, rng=None) -> WeightingMatrix:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "standard":
        return standard_precision(M)
    if spec.kind == "pinv":
        return pseudo_precision(M)
    return ner_precision(M, spec, rng)
