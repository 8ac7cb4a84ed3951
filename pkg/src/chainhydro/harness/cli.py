"""Command-line entry point: ``chainhydro <experiment> --config FILE``.

Exit status is 0 when every check passes, 2 when a check fails and 1 on
configuration or runtime errors.
"""

import argparse
import logging
import sys

from .config import EXPERIMENT_KINDS, ConfigError, load_config
from .experiments import run_experiment

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(prog="chainhydro",
                                     description="Run a harmonic-chain experiment.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENT_KINDS:
        p = sub.add_parser(name, help=f"run a {name} experiment")
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
        p.add_argument("--quiet", action="store_true", help="only print failures")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if config.experiment != args.experiment:
            raise ConfigError(f"config is for {config.experiment!r}, not {args.experiment!r}")
        config = config.with_overrides(seed=args.seed, output_dir=args.out)
        manifest = run_experiment(config)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for check in manifest.checks:
        if not args.quiet or not check["passed"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"{status} {check['name']}: value={check['value']} bound={check['bound']}")
    if not args.quiet:
        print(f"outputs in {config.output_dir} ({manifest.wall_time:.1f} s)")
    return 0 if manifest.ok else 2


if __name__ == "__main__":
    sys.exit(main())
