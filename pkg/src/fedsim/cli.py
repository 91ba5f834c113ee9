"""Command-line interface: run, sweep, ldp-check, estimator-bench."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    PRESET_NAMES,
    load_config,
    load_preset,
    load_sweep,
)
from .ldp import LdpConfig, SizeLaw, bench_estimator_mse, verify_ldp_ratio


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config across its seeds")
    run.add_argument("--config", required=True, help="experiment TOML path")
    run.add_argument("--seed", type=int, help="replace the config's seed list with one seed")
    run.add_argument("--out", help="output directory (overrides config)")
    run.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    sweep = sub.add_parser("sweep", help="expand and run a sweep grid")
    src = sweep.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="sweep TOML path")
    src.add_argument("--preset", choices=PRESET_NAMES, help="shipped study preset")
    sweep.add_argument("--seed", type=int, help="replace the base seed list with one seed")
    sweep.add_argument("--out", help="output directory (overrides config)")
    sweep.add_argument("--cap", type=int, help="override the expansion cap")
    sweep.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    check = sub.add_parser("ldp-check", help="verify the privacy ratio identity")
    check.add_argument("--epsilon", required=True, help="budget(s), comma-separated")
    check.add_argument("--M", required=True, help="size threshold(s), comma-separated")
    check.add_argument("--json", action="store_true", help="emit JSON instead of a table")

    bench = sub.add_parser("estimator-bench", help="Monte Carlo bench of the size estimator")
    bench.add_argument("--H", default="100,1000,10000", help="client counts, comma-separated")
    bench.add_argument("--epsilon", type=float, default=3.0)
    bench.add_argument("--M", type=int, default=300)
    bench.add_argument("--K", type=int, default=2048)
    bench.add_argument("--trials", type=int, default=200)
    bench.add_argument("--seed", type=int, default=7)
    bench.add_argument("--mean-size", type=float, default=100.0, help="mean client size of the bench law")
    bench.add_argument("--size-sigma", type=float, default=0.5, help="log-space spread of the bench law")
    bench.add_argument("--out", help="directory for CSV + figure output")
    bench.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    return parser


def _fail(message: str) -> int:
    print(json.dumps({"error": message}), file=sys.stderr)
    return 1


def cmd_run(args: argparse.Namespace) -> int:
    from .harness import run_experiment

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    result = run_experiment(cfg, out_dir=args.out, figures=not args.no_figures)
    print(f"wrote {result.out_dir}/aggregate.csv ({len(result.histories)} runs)")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from .harness import run_sweep

    spec = load_preset(args.preset) if args.preset else load_sweep(args.config)
    if args.seed is not None:
        spec = replace(spec, base=replace(spec.base, seeds=(args.seed,)))
    if args.cap is not None:
        spec = replace(spec, cap=args.cap)
    result = run_sweep(spec, out_dir=args.out, figures=not args.no_figures)
    print(f"wrote {result.out_dir}/combined.csv ({len(result.points)} grid points)")
    return 0


def cmd_ldp_check(args: argparse.Namespace) -> int:
    epsilons = [float(v) for v in args.epsilon.split(",")]
    thresholds = [int(v) for v in args.M.split(",")]
    rows = []
    for eps in epsilons:
        for M in thresholds:
            cfg = LdpConfig.from_budget(eps, M)
            check = verify_ldp_ratio(cfg)
            rows.append(
                {
                    "epsilon": check.epsilon,
                    "M": check.M,
                    "alpha": check.alpha,
                    "analytic_ratio": check.analytic_ratio,
                    "bound": check.bound,
                    "satisfies": check.satisfies,
                }
            )
    if args.json:
        print(json.dumps({"results": rows}))
    else:
        print(f"{'epsilon':>8} {'M':>7} {'alpha':>10} {'ratio':>14} {'e^eps':>14}  pass")
        for r in rows:
            print(
                f"{r['epsilon']:>8g} {r['M']:>7d} {r['alpha']:>10.6f} "
                f"{r['analytic_ratio']:>14.6f} {r['bound']:>14.6f}  "
                f"{'yes' if r['satisfies'] else 'NO'}"
            )
    return 0 if all(r["satisfies"] for r in rows) else 1


def cmd_estimator_bench(args: argparse.Namespace) -> int:
    counts = [int(v) for v in args.H.split(",")]
    cfg = LdpConfig.from_budget(args.epsilon, args.M)
    law = SizeLaw(kind="lognormal", mean_size=args.mean_size, sigma=args.size_sigma, cap=args.M - 1)
    rows = [
        row.as_dict()
        for row in bench_estimator_mse(counts, cfg, law, args.K, args.trials, args.seed)
    ]
    if args.json:
        print(json.dumps({"results": rows}))
    else:
        print(
            f"{'clients':>8} {'trials':>7} {'excluded':>9} {'mse(p)':>12} "
            f"{'mean(est)':>14} {'mean(N)':>12} {'mean(NK/est)':>13}"
        )
        for r in rows:
            print(
                f"{r['clients']:>8d} {r['trials']:>7d} {r['excluded_nonpositive']:>9d} "
                f"{r['mse_probability']:>12.4e} {r['mean_estimate']:>14.1f} "
                f"{r['mean_true_total']:>12.1f} {r['mean_scaled_demand']:>13.1f}"
            )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "estimator_bench.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        from . import report

        report.render_estimator_bench(out, rows)
        print(f"wrote {out}/estimator_bench.csv")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "sweep": cmd_sweep,
        "ldp-check": cmd_ldp_check,
        "estimator-bench": cmd_estimator_bench,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except (ValueError, RuntimeError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
