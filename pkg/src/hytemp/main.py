"""Main entry point for hytemp."""

import argparse
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING

from hytemp.__about__ import __version__

if TYPE_CHECKING:
    from hytemp.config import ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_IO = 3

VERBS = ("generate", "run", "sweep", "ablate-conformal", "verify", "report", "grid-search")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hytemp",
        description="Hybrid physics/data-driven quantile forecasts of indoor temperature.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
    )
    parser.add_argument("verb", choices=VERBS, help="What to do.")
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="Experiment file (default: $XDG_CONFIG_HOME/hytemp/experiment.toml).",
    )
    parser.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Output directory (default: $XDG_DATA_HOME/hytemp/runs/<name>).",
    )
    parser.add_argument("--seed", type=int, default=None, help="Override the configured seed.")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log per-epoch details.")
    return parser


def _generate(config: "ExperimentConfig", out: Path) -> int:
    from hytemp.dataset import write_dataset_csv
    from hytemp.experiment import DATASET_FILE
    from hytemp.files import ensure_writable_dir
    from hytemp.synthetic import generate_synthetic_dataset

    directory = ensure_writable_dir(out)
    generated = generate_synthetic_dataset(None, config.scenario, config.seed)
    write_dataset_csv(generated.dataset, directory / DATASET_FILE)
    print(f"Wrote {len(generated.dataset)} rows to {directory / DATASET_FILE} (physics RMSE {generated.physics_rmse:.3f} °C)")
    return EXIT_OK


def _dispatch(args: argparse.Namespace) -> int:
    from hytemp import experiment
    from hytemp.config import load_config

    if args.verb in ("verify", "report"):
        if args.out is None:
            print(f"Error: {args.verb} needs --out <run directory>", file=sys.stderr)
            return EXIT_CONFIG
        if args.verb == "report":
            written = experiment.rebuild_tables(args.out)
            print(f"Wrote {len(written)} tables to {args.out}")
            return EXIT_OK
        mismatches = experiment.verify(args.out)
        for line in mismatches:
            print(line)
        if mismatches:
            print(f"{len(mismatches)} values differ from the report", file=sys.stderr)
            return EXIT_PARTIAL
        print("All reported values reproduced.")
        return EXIT_OK

    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.out is not None:
        config = config.replace(output_dir=str(args.out))
    out = config.output_path

    if args.verb == "generate":
        return _generate(config, out)
    runner = {
        "run": experiment.run_experiment,
        "sweep": experiment.sweep,
        "ablate-conformal": experiment.conformal_ablation,
        "grid-search": experiment.grid_search,
    }[args.verb]
    report = runner(config, out)
    print(f"Wrote {out / experiment.REPORT_FILE}")
    if report.failures:
        for failure in report.failures:
            print(f"Failed: {failure['strategy']}/{failure['model']}: {failure['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def main() -> int:
    """Run the hytemp command line.

    Returns:
        Exit code: 0 success, 1 configuration or input error, 2 partial
        failure, 3 I/O error.
    """
    args = build_parser().parse_args()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    from hytemp.errors import ConfigError, HytempError

    try:
        return _dispatch(args)
    except KeyboardInterrupt:
        return EXIT_PARTIAL
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except HytempError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
