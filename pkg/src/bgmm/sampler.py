"""Adaptive Metropolis-Hastings for the GMM quasi-posterior.

The proposal is a Gaussian random walk whose Cholesky scale is tuned during
warmup by the robust adaptive Metropolis rule (target acceptance 0.234).
The weighting matrix is handled by one of five strategies:

``Oracle``
    built once at the true parameter.
``Concurrent``
    rebuilt at every proposal and accepted/rejected together with it.
``Stochastic``
    rebuilt at the current state before each coordinate-wise update.
``Continuous``
    rebuilt at the recursive mean of the draws every iteration.
``Random``
    rebuilt at the recursive mean with probability exp(a0 + a1 j) during
    warmup, then frozen.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from bgmm import kernels
from bgmm.moments import InitializerError, LinearIVModel, NumericalError, tsls_estimate
from bgmm.posterior import QuasiPosterior, acceptance_probability, log_ratio_concurrent
from bgmm.weighting import WeightingMatrix, WeightingSpec, build_weighting

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Oracle:
    theta_true: tuple
    name = "oracle"


@dataclass(frozen=True)
class Concurrent:
    name = "concurrent"


@dataclass(frozen=True)
class Stochastic:
    # overrides WeightingSpec.n_permutations for the per-coordinate rebuilds
    n_permutations: int | None = None
    name = "stochastic"


@dataclass(frozen=True)
class Continuous:
    name = "continuous"


@dataclass(frozen=True)
class Random:
    alpha0: float = -1.0
    # None means -10 / j_warmup
    alpha1: float | None = None
    name = "random"

    def __post_init__(self):
        if self.alpha1 is not None and self.alpha1 > 0:
            raise ValueError("alpha1 must be <= 0 for diminishing adaptation")

    def slope(self, j_warmup: int) -> float:
        return -10.0 / j_warmup if self.alpha1 is None else self.alpha1


STRATEGIES = {
    "oracle": Oracle,
    "concurrent": Concurrent,
    "stochastic": Stochastic,
    "continuous": Continuous,
    "random": Random,
}


@dataclass(frozen=True)
class RamConfig:
    target_accept: float = 0.234
    decay_exponent: float = 2.0 / 3.0
    initial_scale: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.5 < self.decay_exponent <= 1.0:
            raise ValueError("decay_exponent must lie in (0.5, 1]")


@dataclass(frozen=True)
class ChainConfig:
    j_total: int = 30_000
    j_warmup: int = 10_000
    seed: int = 0
    theta_init: np.ndarray | None = None
    w_init: np.ndarray | None = None
    weighting: WeightingSpec = field(default_factory=WeightingSpec)
    strategy: object = field(default_factory=Random)
    ram: RamConfig = field(default_factory=RamConfig)

    def __post_init__(self):
        if not 0 < self.j_warmup < self.j_total:
            raise ValueError("need 0 < j_warmup < j_total")


@dataclass(frozen=True)
class ChainOutput:
    draws: np.ndarray
    accepted: np.ndarray
    adapted: np.ndarray
    recursive_means: np.ndarray
    adaptation_times: tuple
    accept_rate: float
    wall_time: float
    j_warmup: int
    failed: bool = False
    failure_reason: str | None = None
    message: str = ""
    scale: np.ndarray | None = None
    scale_skips: int = 0

    @property
    def posterior_draws(self) -> np.ndarray:
        return self.draws[self.j_warmup:]

    @property
    def n_adaptations(self) -> int:
        return len(self.adaptation_times)


def adaptation_probability(j: int, alpha0: float, alpha1: float) -> float:
    """s(j) = exp(alpha0 + alpha1 j), capped at 1."""
    if j < 0:
        raise ValueError("iteration index must be >= 0")
    return min(1.0, math.exp(alpha0 + alpha1 * j))


def should_adapt(j: int, j_warmup: int, rng: np.random.Generator, alpha0: float,
                 alpha1: float) -> bool:
    """Draw u ~ U(0,1) and report u < s(j); always False, with no draw,
    once j reaches ``j_warmup``."""
    if j >= j_warmup:
        return False
    return rng.random() < adaptation_probability(j, alpha0, alpha1)


def update_recursive_mean(mean: np.ndarray, theta: np.ndarray, j: int) -> np.ndarray:
    if j < 1:
        raise ValueError("j must be >= 1")
    return mean + (theta - mean) / j


def ram_propose(theta: np.ndarray, S: np.ndarray, rng: np.random.Generator):
    """theta' = theta + S u with u standard normal; returns (theta', u)."""
    u = rng.standard_normal(theta.shape[0])
    return theta + S @ u, u


def ram_step_size(j: int, dim: int, cfg: RamConfig) -> float:
    return min(1.0, dim * j ** (-cfg.decay_exponent))


def ram_adapt(S: np.ndarray, u: np.ndarray, accept_prob: float, j: int, cfg: RamConfig,
              eta: float | None = None) -> tuple[np.ndarray, bool]:
    """Robust adaptive Metropolis update of the proposal factor.

    Returns ``(S', ok)`` with S'S'' = S (I + c u u' / |u|^2) S' and
    c = eta (accept_prob - target), computed as a rank-one Cholesky
    up/downdate. When the downdate would lose positive definiteness the old
    factor is returned with ``ok=False``.
    """
    if eta is None:
        eta = ram_step_size(j, S.shape[0], cfg)
    c = eta * (accept_prob - cfg.target_accept)
    norm2 = float(u @ u)
    if c == 0.0 or norm2 == 0.0:
        return S, True
    v = np.ascontiguousarray(S @ u) * math.sqrt(abs(c) / norm2)
    L = np.array(S, dtype=np.float64, order="C", copy=True)
    if not kernels.chol_rank1_update(L, v, 1 if c > 0 else -1):
        return S, False
    return L, True


def interquantile_range(draws, lo: float = 0.25, hi: float = 0.75) -> float:
    """Nearest-rank quantile spread ``q(hi) - q(lo)``."""
    draws = np.asarray(draws, dtype=np.float64).reshape(-1)
    if draws.size < 2:
        raise ValueError("need at least two draws")
    if not 0.0 < lo < hi < 1.0:
        raise ValueError("need 0 < lo < hi < 1")
    q = np.quantile(draws, [lo, hi], method="inverted_cdf")
    return float(q[1] - q[0])


def initial_theta(posterior: QuasiPosterior) -> np.ndarray:
    """2SLS for linear IV (0 if degenerate); zeros otherwise."""
    if isinstance(posterior.model, LinearIVModel):
        try:
            return np.array([tsls_estimate(posterior.data)])
        except InitializerError:
            log.warning("2SLS initializer degenerate; starting at 0")
            return np.zeros(1)
    return np.zeros(posterior.param_dim)


class _Chain:
    """Mutable state of one run; :func:`run_chain` is the public entry."""

    def __init__(self, posterior: QuasiPosterior, cfg: ChainConfig):
        self.post = posterior
        self.cfg = cfg
        self.strategy = cfg.strategy
        L = posterior.param_dim
        seq_prop, seq_adapt, seq_perm = np.random.SeedSequence(cfg.seed).spawn(3)
        self.rng_prop = np.random.default_rng(seq_prop)
        self.rng_adapt = np.random.default_rng(seq_adapt)
        self.rng_perm = np.random.default_rng(seq_perm)

        spec = cfg.weighting
        if isinstance(self.strategy, Stochastic) and self.strategy.n_permutations is not None:
            spec = replace(spec, n_permutations=self.strategy.n_permutations)
        self.spec = spec

        theta0 = initial_theta(posterior) if cfg.theta_init is None else cfg.theta_init
        self.theta = np.array(theta0, dtype=np.float64).reshape(-1)
        if self.theta.shape[0] != L:
            raise ValueError("theta_init has the wrong length")
        S0 = np.eye(L) if cfg.ram.initial_scale is None else cfg.ram.initial_scale
        self.S = np.array(S0, dtype=np.float64, order="C").reshape(L, L)
        # coordinate-wise scales for the stochastic strategy
        self.coord_scale = np.diag(self.S).copy()
        self.mean = self.theta.copy()
        self.scale_skips = 0

    def build(self, theta) -> WeightingMatrix:
        return build_weighting(self.post.moments(theta), self.spec, self.rng_perm)

    def quadratic(self, theta, W) -> float:
        q = self.post.quadratic(theta, W)
        if not math.isfinite(q):
            raise NumericalError("non-finite GMM criterion")
        return q

    def metropolis(self, log_ratio: float) -> tuple[bool, float]:
        alpha = acceptance_probability(log_ratio)
        return self.rng_prop.random() < alpha, alpha

    def adapt_scale(self, u, alpha, j):
        self.S, ok = ram_adapt(self.S, u, alpha, j, self.cfg.ram)
        if not ok:
            self.scale_skips += 1
            log.warning("proposal downdate at iteration %d lost definiteness; kept old scale", j)

    def run(self) -> ChainOutput:
        cfg, post, strategy = self.cfg, self.post, self.strategy
        J, Jw, L = cfg.j_total, cfg.j_warmup, post.param_dim
        draws = np.empty((J, L))
        means = np.empty((J, L))
        accepted = np.zeros(J, dtype=bool)
        adapted = np.zeros(J, dtype=bool)
        times: list[int] = []
        n_prop = n_acc = 0
        done = 0
        failed, reason, message = False, None, ""
        t0 = time.perf_counter()
        try:
            if isinstance(strategy, Oracle):
                W = self.build(np.asarray(strategy.theta_true, dtype=np.float64))
            elif isinstance(strategy, Concurrent):
                W = self.build(self.theta)
                if W.log_det is None:
                    raise NumericalError("weighting matrix is singular")
            elif cfg.w_init is not None:
                W = WeightingMatrix(cfg.w_init)
            else:
                W = WeightingMatrix.identity(post.moment_dim)
            q = self.quadratic(self.theta, W)
            if isinstance(strategy, Random):
                a0, a1 = strategy.alpha0, strategy.slope(Jw)

            for j in range(1, J + 1):
                warm = j <= Jw
                rebuilt = False
                if isinstance(strategy, Random):
                    if should_adapt(j - 1, Jw, self.rng_adapt, a0, a1):
                        W = self.build(self.mean)
                        q = self.quadratic(self.theta, W)
                        rebuilt = True
                elif isinstance(strategy, Continuous):
                    W = self.build(self.mean)
                    q = self.quadratic(self.theta, W)
                    rebuilt = True

                if isinstance(strategy, Stochastic):
                    acc_any = False
                    for l in range(L):
                        W = self.build(self.theta)
                        q = self.quadratic(self.theta, W)
                        z = self.rng_prop.standard_normal()
                        prop = self.theta.copy()
                        prop[l] += self.coord_scale[l] * z
                        q_new = self.quadratic(prop, W)
                        ok, alpha = self.metropolis(
                            post.log_ratio_from_quadratics(q_new, q, prop, self.theta))
                        n_prop += 1
                        if ok:
                            self.theta, q = prop, q_new
                            n_acc += 1
                            acc_any = True
                        if warm:
                            s, _ = ram_adapt(np.array([[self.coord_scale[l]]]), np.array([z]),
                                             alpha, j, cfg.ram)
                            self.coord_scale[l] = s[0, 0]
                    rebuilt = True
                    accepted[j - 1] = acc_any
                elif isinstance(strategy, Concurrent):
                    prop, u = ram_propose(self.theta, self.S, self.rng_prop)
                    W_new = self.build(prop)
                    q_new = self.quadratic(prop, W_new)
                    lr = log_ratio_concurrent(
                        post.n_obs, q_new, q, W_new.log_det, W.log_det,
                        post.log_prior(prop) - post.log_prior(self.theta))
                    ok, alpha = self.metropolis(lr)
                    n_prop += 1
                    if ok:
                        self.theta, W, q = prop, W_new, q_new
                        n_acc += 1
                    accepted[j - 1] = ok
                    rebuilt = True
                    if warm:
                        self.adapt_scale(u, alpha, j)
                else:
                    prop, u = ram_propose(self.theta, self.S, self.rng_prop)
                    q_new = self.quadratic(prop, W)
                    ok, alpha = self.metropolis(
                        post.log_ratio_from_quadratics(q_new, q, prop, self.theta))
                    n_prop += 1
                    if ok:
                        self.theta, q = prop, q_new
                        n_acc += 1
                    accepted[j - 1] = ok
                    if warm:
                        self.adapt_scale(u, alpha, j)

                if rebuilt:
                    times.append(j)
                    adapted[j - 1] = True
                self.mean = update_recursive_mean(self.mean, self.theta, j)
                draws[j - 1] = self.theta
                means[j - 1] = self.mean
                done = j
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failed, reason, message = True, "numerical", str(exc)
        wall = time.perf_counter() - t0
        return ChainOutput(
            draws=draws[:done],
            accepted=accepted[:done],
            adapted=adapted[:done],
            recursive_means=means[:done],
            adaptation_times=tuple(times),
            accept_rate=n_acc / n_prop if n_prop else float("nan"),
            wall_time=wall,
            j_warmup=Jw,
            failed=failed,
            failure_reason=reason,
            message=message,
            scale=self.S if not isinstance(strategy, Stochastic) else np.diag(self.coord_scale),
            scale_skips=self.scale_skips,
        )


def run_chain(posterior: QuasiPosterior, cfg: ChainConfig) -> ChainOutput:
    """Run one chain. Numerical failures are reported in the output
    (``failed=True``, ``failure_reason="numerical"``), never raised."""
    return _Chain(posterior, cfg).run()


def write_trace(output: ChainOutput, path) -> None:
    """CSV trace: iteration, theta components, accepted, adapted, running means."""
    L = output.draws.shape[1] if output.draws.ndim == 2 else 1
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", *(f"theta{l + 1}" for l in range(L)), "accepted", "adapted",
                         *(f"mean{l + 1}" for l in range(L))])
        for j in range(output.draws.shape[0]):
            writer.writerow([j + 1, *(repr(float(v)) for v in output.draws[j]),
                             int(output.accepted[j]), int(output.adapted[j]),
                             *(repr(float(v)) for v in output.recursive_means[j])])
