"""``bgmm`` command-line interface.

Subcommands
-----------
simulate     run a grid of Monte Carlo experiments and write a results CSV
dgp          dump one synthetic dataset (CSV) plus ground truth (JSON sidecar)
estimate     run one chain on a CSV dataset and write a JSON report
ner-profile  profile the NER split criterion over split locations
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from bgmm.data_io import (
    InputError,
    read_json,
    sidecar_path,
    write_dataset_csv,
    write_json,
    write_rows_csv,
)
from bgmm.dgp import DgpConfig, generate_dataset
from bgmm.harness import (
    PROFILE_HEADER,
    RESULTS_HEADER,
    ExperimentSpec,
    criterion_profile,
    estimate_from_csv,
    run_grid,
)
from bgmm.sampler import STRATEGIES
from bgmm.weighting import WeightingSpec

EXIT_OK, EXIT_INPUT, EXIT_CHAIN = 0, 2, 3

log = logging.getLogger("bgmm")


def _load_specs(path) -> list[ExperimentSpec]:
    cfg = read_json(path)
    if isinstance(cfg, dict) and "experiments" in cfg:
        defaults = cfg.get("defaults", {})
        entries = [_merge(defaults, e) for e in cfg["experiments"]]
    elif isinstance(cfg, list):
        entries = cfg
    else:
        entries = [cfg]
    try:
        return [ExperimentSpec.from_dict(e) for e in entries]
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid experiment config: {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _dgp_config(path) -> tuple[DgpConfig, dict]:
    raw = read_json(path)
    extra = {k: raw.pop(k) for k in ("grid", "n_permutations", "perms_per_value", "profile_seed")
             if k in raw}
    try:
        return DgpConfig.from_dict(raw.get("dgp", raw)), extra
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid DGP config: {exc}") from exc


def cmd_simulate(args) -> int:
    specs = _load_specs(args.config)
    rows = run_grid(specs, parallelism=args.parallelism, progress=not args.quiet)
    write_rows_csv(args.out, RESULTS_HEADER, [r.as_csv_row() for r in rows])
    print(f"{'K':>4} {'estimator':<9} {'strategy':<11} {'Fail':>9} {'MSE':>7} {'MAE':>7} {'Time':>8}")
    for r in rows:
        mse = "–" if r.mse is None else f"{r.mse:.3f}"
        mae = "–" if r.mae is None else f"{r.mae:.3f}"
        print(f"{r.K:>4} {r.estimator:<9} {r.strategy:<11} {r.fail_count:>9} {mse:>7} {mae:>7} "
              f"{r.mean_time:>8.2f}")
    return EXIT_OK


def cmd_dgp(args) -> int:
    cfg, _ = _dgp_config(args.config)
    if args.seed is not None:
        cfg = DgpConfig(**{**cfg.to_dict(), "seed": args.seed})
    draw = generate_dataset(cfg)
    write_dataset_csv(draw.data, args.out)
    truth = {**draw.truth(), "config": cfg.to_dict()}
    write_json(truth, sidecar_path(args.out))
    print(f"wrote {draw.data.n_obs} rows x {draw.data.n_instruments} instruments to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    weighting = WeightingSpec(kind=args.estimator, n_star=args.n_star, n_permutations=args.perms)
    options = {}
    if args.strategy == "stochastic" and args.stochastic_perms is not None:
        options["n_permutations"] = args.stochastic_perms
    theta_true = args.truth
    if args.strategy == "oracle" and theta_true is None:
        side = sidecar_path(args.data)
        if not side.exists():
            raise InputError("oracle strategy needs --truth or a .truth.json sidecar")
        theta_true = read_json(side)["gamma_true"]
    report = estimate_from_csv(
        args.data, weighting, args.strategy, args.draws, args.warmup, seed=args.seed,
        out_path=args.out, strategy_options=options, theta_true=theta_true,
        trace_path=args.trace)
    if report["post_mean"] is None:
        print(f"chain failed: {report['failure_reason']}")
    else:
        print(f"posterior mean {report['post_mean']:.6f}  sd {report['post_sd']:.6f}  "
              f"IQR {report['iqr']:.6f}")
    print(f"acceptance rate {report['accept_rate']:.3f}, W rebuilds {report['n_adaptations']}, "
          f"chain time {report['wall_time_s']:.2f}s")
    if report["failed"]:
        print(f"run flagged as failed ({report['failure_reason']})", file=sys.stderr)
        return EXIT_CHAIN
    return EXIT_OK


def cmd_ner_profile(args) -> int:
    cfg, extra = _dgp_config(args.config)
    grid = args.grid or extra.get("grid")
    n_perm = args.perms or extra.get("n_permutations", 100)
    per_value = extra.get("perms_per_value", 5)
    seed = extra.get("profile_seed", cfg.seed)
    rows = criterion_profile(cfg, grid, n_perm, np.random.default_rng(seed), per_value)
    write_rows_csv(args.out, PROFILE_HEADER, rows)
    for n_star, med, lo, hi in rows:
        print(f"{n_star:>6} {med:12.5g} [{lo:.5g}, {hi:.5g}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgmm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run Monte Carlo experiments")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("dgp", help="dump one synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_dgp)

    s = sub.add_parser("estimate", help="estimate the IV coefficient from a CSV file")
    s.add_argument("--data", required=True)
    s.add_argument("--estimator", choices=["standard", "pinv", "ner"], default="ner")
    s.add_argument("--strategy", choices=list(STRATEGIES), default="random")
    s.add_argument("--n-star", type=int)
    s.add_argument("--perms", type=int, default=50)
    s.add_argument("--stochastic-perms", type=int)
    s.add_argument("--draws", type=int, default=30_000)
    s.add_argument("--warmup", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--truth", type=float, help="true coefficient (oracle strategy)")
    s.add_argument("--trace")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("ner-profile", help="profile the split criterion")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--perms", type=int)
    s.add_argument("--grid", type=int, nargs="+")
    s.set_defaults(func=cmd_ner_profile)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"bgmm: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"bgmm: invalid argument: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
