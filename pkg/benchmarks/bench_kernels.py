"""Compiled vs pure-Python kernels: per-kernel timings and whole chains.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 7] [--chain-draws 6000]

Per-kernel numbers are the best of ``--repeat`` timeit runs, in
microseconds per call. Chain numbers are wall time of one Random/NER chain
and one Oracle/standard chain per backend on the same dataset and seed.
"""

from __future__ import annotations

import argparse
import contextlib
import timeit

import numpy as np

from bgmm import _pykernels, kernels
from bgmm.dgp import DgpConfig, generate_dataset
from bgmm.moments import LinearIVModel
from bgmm.posterior import QuasiPosterior
from bgmm.sampler import ChainConfig, Oracle, run_chain
from bgmm.weighting import WeightingSpec

KERNELS = ("linear_iv_moment_matrix", "linear_iv_moment_mean", "quad_form", "chol_rank1_update")


@contextlib.contextmanager
def use_backend(impl):
    """Temporarily route :mod:`bgmm.kernels` to ``impl``."""
    saved = {name: getattr(kernels, name) for name in KERNELS}
    try:
        for name in KERNELS:
            setattr(kernels, name, getattr(impl, name))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def _best(stmt, repeat, number):
    return min(timeit.repeat(stmt, repeat=repeat, number=number)) / number * 1e6


def kernel_table(impl, K, repeat):
    r = np.random.default_rng(0)
    N = 200
    y, x, Z = r.normal(size=N), r.normal(size=N), np.ascontiguousarray(r.normal(size=(N, K)))
    A = r.normal(size=(K, K))
    W = np.ascontiguousarray(A @ A.T)
    v = r.normal(size=K)
    L = np.linalg.cholesky(W + K * np.eye(K))
    u = 0.1 * r.normal(size=K)

    def chol():
        impl.chol_rank1_update(L.copy(), u.copy(), 1)

    return {
        "linear_iv_moment_matrix": _best(lambda: impl.linear_iv_moment_matrix(y, x, Z, 0.5),
                                         repeat, 200),
        "linear_iv_moment_mean": _best(lambda: impl.linear_iv_moment_mean(y, x, Z, 0.5),
                                       repeat, 500),
        "quad_form": _best(lambda: impl.quad_form(W, v), repeat, 500),
        "chol_rank1_update (L=K)": _best(chol, repeat, 50),
    }


def chain_times(impl, draws, K):
    draw = generate_dataset(DgpConfig(n_instruments=K, seed=0))
    post = QuasiPosterior(LinearIVModel(K), draw.data)
    warm = draws // 3
    cfgs = {
        "random/ner": ChainConfig(j_total=draws, j_warmup=warm, seed=1),
        "oracle/standard": ChainConfig(j_total=draws, j_warmup=warm, seed=1,
                                       strategy=Oracle((0.5,)),
                                       weighting=WeightingSpec("standard")),
    }
    out = {}
    with use_backend(impl):
        for name, cfg in cfgs.items():
            res = run_chain(post, cfg)
            out[name] = (res.wall_time, float(res.posterior_draws.mean()))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--chain-draws", type=int, default=6000)
    p.add_argument("--sizes", type=int, nargs="+", default=[50, 150, 250])
    args = p.parse_args(argv)

    compiled = kernels.compiled_backend
    backends = [("python", _pykernels)]
    if compiled is None:
        print("compiled backend unavailable; timing the Python fallback only")
    else:
        backends.insert(0, ("cython", compiled))

    print(f"active backend at import: {kernels.BACKEND}")
    for K in args.sizes:
        print(f"\nper-call time in microseconds, N=200, K={K}")
        tables = {name: kernel_table(impl, K, args.repeat) for name, impl in backends}
        header = f"{'kernel':<26}" + "".join(f"{n:>12}" for n, _ in backends)
        if compiled is not None:
            header += f"{'speedup':>10}"
        print(header)
        for kname in tables["python"]:
            row = f"{kname:<26}" + "".join(f"{tables[n][kname]:>12.2f}" for n, _ in backends)
            if compiled is not None:
                row += f"{tables['python'][kname] / tables['cython'][kname]:>9.2f}x"
            print(row)

    K = args.sizes[0]
    print(f"\nwhole chain, {args.chain_draws} draws, K={K} (wall seconds, posterior mean)")
    results = {name: chain_times(impl, args.chain_draws, K) for name, impl in backends}
    for chain in results["python"]:
        cells = "".join(f"{name:>8}: {results[name][chain][0]:7.3f}s ({results[name][chain][1]:.6f})"
                        for name, _ in backends)
        print(f"{chain:<16}{cells}")


if __name__ == "__main__":
    main()
