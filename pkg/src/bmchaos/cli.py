"""Command-line entry point: ``bmchaos <subcommand> [--config] [--seed] [--workers] [--out]``."""

import argparse
import sys

from .config import ConfigError, ExperimentConfig, MAX_SEED, load_config
from .experiments import run_experiment
from .report import fmt

SUBCOMMANDS = {
    "verify-bessel": "bessel-verify",
    "barrier": "barrier-battery",
    "chaos": "chaos-run",
    "diagnostics": "chaos-diagnostics",
    "thickpoints": "thickpoints",
}


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _workers(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmchaos",
        description="Simulation and verification batteries for Brownian multiplicative chaos.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, exp in SUBCOMMANDS.items():
        p = sub.add_parser(cmd, help=f"run the {exp} battery")
        p.add_argument("--config", help="TOML or JSON experiment file")
        p.add_argument("--seed", type=_seed, help="64-bit seed (overrides the config)")
        p.add_argument("--workers", type=_workers, help="worker processes (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--quiet", action="store_true", help="do not print verdict lines")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(args.config, experiment) if args.config else ExperimentConfig(experiment)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.out is not None:
            cfg.out = args.out
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        for v in report.verdicts:
            flag = "PASS" if v.passed else "FAIL"
            print(f"{flag}  {v.name}: {fmt(v.estimate)} [{fmt(v.ci_lo)}, {fmt(v.ci_hi)}]"
                  f" target={fmt(v.target)} n={v.n} {v.note}".rstrip())
        print(f"{len(report.verdicts)} verdicts, config {report.config_hash[:12]}, seed {cfg.seed},"
              f" output {cfg.out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
