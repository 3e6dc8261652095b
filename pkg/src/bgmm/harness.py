"""Monte Carlo experiment runner.

A cell of the experiment grid is an :class:`ExperimentSpec`: a data
generating process, a weighting estimator, an adaptation strategy, chain
lengths and a replication count. Each replication draws its own dataset
and chain seed from ``(master_seed, index)``, so results do not depend on
the order or process in which replications run.
"""

from __future__ import annotations

import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from bgmm.data_io import read_dataset_csv, write_json
from bgmm.dgp import DgpConfig, generate_dataset
from bgmm.moments import LinearIVModel, moment_matrix
from bgmm.posterior import QuasiPosterior
from bgmm.sampler import (
    STRATEGIES,
    ChainConfig,
    ChainOutput,
    Oracle,
    RamConfig,
    interquantile_range,
    run_chain,
    write_trace,
)
from bgmm.weighting import WeightingSpec, split_criterion

MASK64 = (1 << 64) - 1

ESTIMATOR_LABELS = {"standard": "Standard", "pinv": "Pinv", "ner": "NER"}


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(master_seed: int, index: int) -> int:
    return splitmix64(splitmix64(master_seed & MASK64) ^ (index & MASK64))


@dataclass(frozen=True)
class FailureRule:
    lo: float = 0.25
    hi: float = 0.75
    min_iqr: float = 0.01
    max_iqr: float = 1.0

    def classify(self, draws) -> tuple[float, str | None]:
        iqr = interquantile_range(draws, self.lo, self.hi)
        if iqr > self.max_iqr:
            return iqr, "iqr_high"
        if iqr < self.min_iqr:
            return iqr, "iqr_low"
        return iqr, None


@dataclass(frozen=True)
class ExperimentSpec:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    weighting: WeightingSpec = field(default_factory=WeightingSpec)
    strategy: str = "random"
    # keyword arguments of the strategy class, e.g. {"alpha0": -1.0}
    strategy_options: dict = field(default_factory=dict)
    j_total: int = 30_000
    j_warmup: int = 10_000
    replications: int = 500
    master_seed: int = 0
    ram: RamConfig = field(default_factory=RamConfig)
    failure: FailureRule = field(default_factory=FailureRule)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 < self.j_warmup < self.j_total:
            raise ValueError("need 0 < j_warmup < j_total")

    def make_strategy(self, theta_true):
        if self.strategy == "oracle":
            return Oracle(tuple(np.atleast_1d(theta_true).tolist()))
        return STRATEGIES[self.strategy](**self.strategy_options)

    @property
    def label(self) -> tuple:
        return (self.dgp.n_instruments, ESTIMATOR_LABELS[self.weighting.kind],
                self.strategy.capitalize())

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "weighting": asdict(self.weighting),
            "strategy": self.strategy,
            "strategy_options": dict(self.strategy_options),
            "j_total": self.j_total,
            "j_warmup": self.j_warmup,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "ram": {"target_accept": self.ram.target_accept,
                    "decay_exponent": self.ram.decay_exponent},
            "failure": asdict(self.failure),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        kw = {}
        if "dgp" in d:
            kw["dgp"] = DgpConfig.from_dict(d.pop("dgp"))
        if "weighting" in d:
            kw["weighting"] = WeightingSpec(**d.pop("weighting"))
        if "ram" in d:
            kw["ram"] = RamConfig(**d.pop("ram"))
        if "failure" in d:
            kw["failure"] = FailureRule(**d.pop("failure"))
        kw.update(d)
        return cls(**kw)


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    failed: bool
    failure_reason: str | None
    post_mean: float
    post_sd: float
    iqr: float
    wall_time: float
    accept_rate: float = float("nan")
    n_adaptations: int = 0


@dataclass(frozen=True)
class SummaryRow:
    K: int
    estimator: str
    strategy: str
    fail: int
    total: int
    mse: float | None
    mae: float | None
    mean_time: float

    @property
    def fail_count(self) -> str:
        return f"{self.fail}/{self.total}"

    def as_csv_row(self) -> list:
        return [self.K, self.estimator, self.strategy, self.fail, self.total,
                self.mse, self.mae, self.mean_time]


RESULTS_HEADER = ["K", "estimator", "strategy", "fail", "total", "mse", "mae", "mean_time_s"]


def chain_config(spec: ExperimentSpec, seed, theta_true) -> ChainConfig:
    return ChainConfig(j_total=spec.j_total, j_warmup=spec.j_warmup, seed=seed,
                       weighting=spec.weighting, strategy=spec.make_strategy(theta_true),
                       ram=spec.ram)


def summarize_chain(out: ChainOutput, rule: FailureRule, index: int = 0) -> ReplicationResult:
    if out.failed:
        return ReplicationResult(index, True, "numerical", math.nan, math.nan, math.nan,
                                 out.wall_time, out.accept_rate, out.n_adaptations)
    draws = out.posterior_draws[:, 0]
    iqr, reason = rule.classify(draws)
    return ReplicationResult(index, reason is not None, reason, float(draws.mean()),
                             float(draws.std(ddof=1)), iqr, out.wall_time, out.accept_rate,
                             out.n_adaptations)


def run_replication(spec: ExperimentSpec, r: int) -> ReplicationResult:
    """One replication; failures of any kind are recorded, never raised."""
    if not 0 <= r < spec.replications:
        raise ValueError(f"replication index {r} outside [0, {spec.replications})")
    seed = replication_seed(spec.master_seed, r)
    try:
        draw = generate_dataset(spec.dgp, np.random.default_rng([seed, 0]))
        post = QuasiPosterior(LinearIVModel.for_data(draw.data), draw.data)
        out = run_chain(post, chain_config(spec, [seed, 1], draw.gamma_true))
    except Exception:  # noqa: BLE001 - isolate the replication
        return ReplicationResult(r, True, "numerical", math.nan, math.nan, math.nan, 0.0)
    return summarize_chain(out, spec.failure, r)


def aggregate(results, gamma_true: float, K: int = 0, estimator: str = "",
              strategy: str = "") -> SummaryRow:
    """Fail count, MSE/MAE over successful runs, mean time over all runs."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    ok = [r.post_mean for r in results if not r.failed]
    mse = math.fsum((m - gamma_true) ** 2 for m in ok) / len(ok) if ok else None
    mae = math.fsum(abs(m - gamma_true) for m in ok) / len(ok) if ok else None
    mean_time = math.fsum(r.wall_time for r in results) / len(results)
    return SummaryRow(K, estimator, strategy, len(results) - len(ok), len(results), mse, mae,
                      mean_time)


def _job(args):
    spec, r = args
    return run_replication(spec, r)


def run_specs(specs, parallelism: int = 1, progress: bool = True) -> list[list[ReplicationResult]]:
    """Run every replication of every spec; returns results grouped per spec."""
    specs = list(specs)
    if not specs:
        raise ValueError("empty experiment grid")
    jobs = [(spec, r) for spec in specs for r in range(spec.replications)]
    total = len(jobs)
    out: list[ReplicationResult] = []
    t0 = time.perf_counter()

    def report(i):
        if progress:
            print(f"\r[bgmm] {i}/{total} replications ({time.perf_counter() - t0:.0f}s)",
                  end="" if i < total else "\n", file=sys.stderr, flush=True)

    if parallelism <= 1:
        for i, job in enumerate(jobs, 1):
            out.append(_job(job))
            report(i)
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for i, res in enumerate(pool.map(_job, jobs, chunksize=1), 1):
                out.append(res)
                report(i)
    grouped, pos = [], 0
    for spec in specs:
        grouped.append(out[pos:pos + spec.replications])
        pos += spec.replications
    return grouped


def run_grid(specs, parallelism: int = 1, progress: bool = True) -> list[SummaryRow]:
    specs = list(specs)
    grouped = run_specs(specs, parallelism, progress)
    return [aggregate(res, spec.dgp.gamma, *spec.label) for spec, res in zip(specs, grouped)]


def fine_grid(n_obs: int) -> list[int]:
    """{0.10N, 0.15N, ..., 0.90N}, each rounded to the nearest integer."""
    return [(2 * i * n_obs + 20) // 40 for i in range(2, 19)]


def criterion_profile(cfg: DgpConfig, grid=None, n_permutations: int = 100,
                      rng: np.random.Generator | None = None, perms_per_value: int = 5,
                      moments: np.ndarray | None = None) -> list[tuple]:
    """Median and 5/95% percentiles of the split criterion along ``grid``.

    The moment matrix is evaluated at the true coefficient of a dataset drawn
    from ``cfg`` (or taken from ``moments``). For every split location,
    ``n_permutations`` independent criterion values are simulated, each
    summing over ``perms_per_value`` random permutations.
    """
    if moments is None:
        draw = generate_dataset(cfg)
        moments = moment_matrix(LinearIVModel.for_data(draw.data), draw.data, [draw.gamma_true])
    n_obs = moments.shape[0]
    grid = fine_grid(n_obs) if grid is None else list(grid)
    if any(not 2 <= g <= n_obs - 2 for g in grid):
        raise ValueError(f"grid entries must lie in [2, {n_obs - 2}]")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    rows = []
    for n_star in grid:
        g = np.array([split_criterion(moments, n_star, perms_per_value, rng)
                      for _ in range(n_permutations)])
        p05, med, p95 = np.percentile(g, [5, 50, 95])
        rows.append((int(n_star), float(med), float(p05), float(p95)))
    return rows


PROFILE_HEADER = ["n_star", "median_g", "p05_g", "p95_g"]


def estimate(data, weighting: WeightingSpec, strategy: str, j_total: int, j_warmup: int,
             seed: int = 0, strategy_options: dict | None = None, theta_true=None,
             ram: RamConfig | None = None, failure: FailureRule | None = None,
             trace_path=None) -> tuple[dict, ChainOutput]:
    """Single chain on a dataset; returns (report dict, chain output)."""
    if strategy == "oracle" and theta_true is None:
        raise ValueError("oracle strategy needs the true parameter")
    options = dict(strategy_options or {})
    strat = (Oracle(tuple(np.atleast_1d(theta_true).tolist())) if strategy == "oracle"
             else STRATEGIES[strategy](**options))
    cfg = ChainConfig(j_total=j_total, j_warmup=j_warmup, seed=seed, weighting=weighting,
                      strategy=strat, ram=ram or RamConfig())
    post = QuasiPosterior(LinearIVModel.for_data(data), data)
    out = run_chain(post, cfg)
    res = summarize_chain(out, failure or FailureRule())
    if trace_path is not None:
        write_trace(out, trace_path)
    report = {
        "post_mean": None if out.failed else res.post_mean,
        "post_sd": None if out.failed else res.post_sd,
        "iqr": None if out.failed else res.iqr,
        "failed": res.failed,
        "failure_reason": res.failure_reason,
        "accept_rate": out.accept_rate,
        "n_adaptations": out.n_adaptations,
        "wall_time_s": out.wall_time,
        "config_echo": {
            "n_obs": data.n_obs,
            "n_instruments": data.n_instruments,
            "weighting": asdict(weighting),
            "strategy": strategy,
            "strategy_options": options,
            "j_total": j_total,
            "j_warmup": j_warmup,
            "seed": seed,
            "timing": "chain wall time only",
            "trace": None if trace_path is None else str(trace_path),
        },
    }
    return report, out


def estimate_from_csv(path, weighting: WeightingSpec, strategy: str, j_total: int,
                      j_warmup: int, seed: int = 0, out_path=None, **kwargs) -> dict:
    data = read_dataset_csv(path)
    report, _ = estimate(data, weighting, strategy, j_total, j_warmup, seed, **kwargs)
    if out_path is not None:
        write_json(report, out_path)
    return report


__all__ = [
    "ExperimentSpec",
    "FailureRule",
    "ReplicationResult",
    "SummaryRow",
    "aggregate",
    "criterion_profile",
    "estimate",
    "estimate_from_csv",
    "fine_grid",
    "replication_seed",
    "run_grid",
    "run_replication",
    "run_specs",
    "splitmix64",
]
