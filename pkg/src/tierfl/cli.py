"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from tierfl import analytics
from tierfl.config import SimConfig, load_config
from tierfl.engine import ExperimentResult, run_experiment
from tierfl.errors import ConfigError, DomainError
from tierfl.scheduler import CIFAR_POLICIES

OUT_ENV = "TIERFL_OUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("tierfl")


class UsageError(Exception):
    pass


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "out"
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _load(args, policy: str | None = None) -> SimConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, policy=policy or args.policy, rounds=args.rounds)


def write_run(result: ExperimentResult, out: Path, suffix: str = "") -> None:
    (out / f"rounds{suffix}.csv").write_text(result.csv_text())
    (out / f"summary{suffix}.json").write_text(result.summary_text())
    (out / f"tiering{suffix}.json").write_text(result.tier_table.dumps())


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    result = run_experiment(cfg)
    write_run(result, out)
    print(json.dumps({"out": str(out), "total_wall_clock_s": result.total_wall_clock,
                      "final_global_acc": result.final_accuracy}))
    return EXIT_OK


def comparison(results: list[ExperimentResult]) -> dict:
    base = next((r.total_wall_clock for r in results if r.config.policy.name == "vanilla"), None)
    entries = []
    for r in results:
        entries.append({
            "policy": r.config.policy.name,
            "final_global_acc": r.final_accuracy,
            "total_wall_clock_s": r.total_wall_clock,
            "speedup_vs_vanilla": None if base is None else base / r.total_wall_clock,
            "estimated_wall_clock_s": r.estimate,
            "estimator_mape_pct": r.mape,
        })
    cfg = results[0].config
    return {"seed": cfg.seed, "rounds": cfg.rounds, "policies": entries}


def cmd_sweep(args) -> int:
    names = args.policies
    cfgs = [_load(args, policy=name) for name in names]
    out = _out_dir(args)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_experiment, cfgs))
    else:
        results = [run_experiment(c) for c in cfgs]
    for name, res in zip(names, results):
        write_run(res, out, f"_{name}")
    (out / "comparison.json").write_text(json.dumps(comparison(results), indent=2, sort_keys=True) + "\n")
    if args.figures:
        from tierfl.plotting import render_sweep

        for path in render_sweep(results, out):
            log.info("wrote %s", path)
    print(json.dumps({"out": str(out), "policies": list(names)}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    what = args.what
    if what == "straggler":
        value = {"pr_s": analytics.straggler_prob(analytics.StragglerParams(args.k, args.c, args.slow))}
    elif what == "straggler-bound":
        value = {"bound": analytics.straggler_prob_bound(analytics.StragglerParams(args.k, args.c, args.slow))}
    elif what == "estimate":
        value = {"seconds": analytics.estimate_training_time(args.latencies, args.probs, args.rounds)}
    elif what == "mape":
        value = {"mape_pct": analytics.mape(args.est, args.act)}
    else:
        weights = args.tier_weights or [1.0] * len(args.tier_sizes)
        params = analytics.PrivacyParams(
            args.epsilon, args.delta, args.c, args.k, len(args.tier_sizes), tuple(args.tier_sizes), tuple(weights)
        )
        value = analytics.privacy_amplification(params).to_json()
    print(json.dumps(value))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tierfl", description="Tier-based federated learning simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--rounds", type=_positive_int)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")

    run = sub.add_parser("run", help="run one experiment")
    experiment_flags(run)
    run.add_argument("--policy", help="vanilla, adaptive or a preset name")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run several policies on the same seed and data")
    experiment_flags(sweep)
    sweep.add_argument("--policy", dest="policies", type=lambda s: [v for v in s.split(",") if v],
                       default=list(CIFAR_POLICIES), help="comma-separated policy names")
    sweep.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes")
    sweep.add_argument("--figures", action="store_true", help="also render PNG figures")
    sweep.set_defaults(func=cmd_sweep, policy=None)

    analyze = sub.add_parser("analyze", help="closed-form calculators (JSON on stdout)")
    calc = analyze.add_subparsers(dest="what", required=True)
    for name in ("straggler", "straggler-bound"):
        p = calc.add_parser(name)
        p.add_argument("--k", type=int, required=True, help="total clients")
        p.add_argument("--c", type=int, required=True, help="clients per round")
        p.add_argument("--slow", type=int, required=True, help="clients in the slowest level")
    p = calc.add_parser("estimate")
    p.add_argument("--latencies", type=_floats, required=True)
    p.add_argument("--probs", type=_floats, required=True)
    p.add_argument("--rounds", type=int, required=True)
    p = calc.add_parser("mape")
    p.add_argument("--est", type=float, required=True)
    p.add_argument("--act", type=float, required=True)
    p = calc.add_parser("privacy")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--tier-sizes", type=_ints, required=True)
    p.add_argument("--tier-weights", type=_floats, help="default: 1 per tier")
    analyze.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        code = EXIT_USAGE if args.command == "analyze" else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
