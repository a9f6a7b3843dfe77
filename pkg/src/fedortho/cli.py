"""Command-line entry point: run, compare, and sweep subcommands.

Exit codes: 0 success, 2 config error, 3 runtime error. The FOT_SEED
environment variable overrides the configured master seed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .errors import ConfigError, FedOrthoError, ParseError
from .harness import load_config, run_experiment, write_reports


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fedortho",
        description="Continual federated learning simulator with projected "
        "aggregation and subspace extraction.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )

    p_cmp = sub.add_parser("compare", help="run several configs, print ACC/FGT table")
    p_cmp.add_argument("--configs", required=True, help="comma-separated config paths")
    p_cmp.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )

    p_sw = sub.add_parser("sweep", help="sweep one parameter over a value list")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--param", required=True, help="config key to vary")
    p_sw.add_argument("--values", required=True, help="comma-separated values")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    result = run_experiment(cfg)
    files = write_reports(result, cfg.out_dir)
    print(f"method={cfg.method} seed={cfg.seed} ACC={result.acc:.4f} FGT={result.fgt:.4f}")
    for path in files:
        print(f"wrote {path}")
    return 0


def _cmd_compare(args) -> int:
    rows = []
    for path in args.configs.split(","):
        cfg = load_config(path.strip(), args.overrides)
        result = run_experiment(cfg)
        write_reports(result, cfg.out_dir)
        rows.append((path.strip(), cfg.method, result.acc, result.fgt))
    print(f"{'config':<32} {'method':<8} {'ACC':>8} {'FGT':>8}")
    for path, method, acc, fgt in rows:
        print(f"{path:<32} {method:<8} {acc:>8.4f} {fgt:>8.4f}")
    return 0


def _cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    base_cfg = load_config(args.config)
    out_dir = base_cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    runs = []
    for val in values:
        cfg = load_config(args.config, [f"{args.param}={val}"])
        cfg.out_dir = os.path.join(out_dir, f"sweep_{args.param.replace('.', '_')}_{val}")
        result = run_experiment(cfg)
        write_reports(result, cfg.out_dir)
        k = result.acc_matrix.shape[0]
        final_util = {
            row[1]: row[4] for row in result.subspace if row[0] == k
        }
        runs.append((val, result.acc, result.fgt, final_util))

    sweep_csv = os.path.join(out_dir, "sweep.csv")
    layers = sorted(runs[0][3]) if runs else []
    with open(sweep_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [args.param, "acc", "fgt"] + [f"utilization_layer_{l}" for l in layers]
        )
        for val, acc, fgt, util in runs:
            w.writerow([val, repr(acc), repr(fgt)] + [repr(util[l]) for l in layers])

    report_path = os.path.join(out_dir, "sweep_monotonicity.txt")
    lines = [f"sweep of {args.param} over {', '.join(values)}"]
    all_monotone = True
    for l in layers:
        series = [util[l] for _, _, _, util in runs]
        monotone = all(b >= a - 1e-12 for a, b in zip(series, series[1:]))
        all_monotone = all_monotone and monotone
        lines.append(
            f"layer {l}: utilization {'non-decreasing' if monotone else 'NOT monotone'}"
            f" -> {', '.join(f'{u:.3f}' for u in series)}"
        )
    lines.append(f"overall: {'monotone' if all_monotone else 'not monotone'}")
    with open(report_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    print("\n".join(lines))
    print(f"wrote {sweep_csv}")
    print(f"wrote {report_path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_sweep(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FedOrthoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
