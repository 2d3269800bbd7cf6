import warnings
warnings.simplefilter(action='ignore', category=FutureWarning)

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from about import about_text
from config import ConfigError, load_config
from constants import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION
from experiments import run_experiment
from report import ReportError, report_run

logger = logging.getLogger("kacsim")


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
        stream=sys.stderr,
        force=True,
    )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        logger.error("Invalid config: %s", e)
        return EXIT_VALIDATION
    try:
        record = run_experiment(cfg)
    except Exception:
        logger.exception("Run failed, partial outputs removed")
        return EXIT_RUNTIME
    print(f"{cfg.kind} run written to {cfg.output_dir} (config {record.config_hash[:12]}, "
          f"{len(record.files)} files, {record.wall_time:.1f} s, {len(record.warnings)} warnings)")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        logger.error("Invalid config: %s", e)
        return EXIT_VALIDATION
    print(f"{args.config}: valid {cfg.kind} experiment, config hash {cfg.config_hash}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        report = report_run(args.run_dir)
    except ReportError as e:
        logger.error("%s", e)
        return EXIT_VALIDATION
    except Exception:
        logger.exception("Report failed")
        return EXIT_RUNTIME
    print(report.text())
    return EXIT_OK


def cmd_version(args: argparse.Namespace) -> int:
    print(about_text())
    return EXIT_OK


# Sous-commandes disponibles
COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "run": cmd_run,
    "report": cmd_report,
    "validate": cmd_validate,
    "version": cmd_version,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kacsim", description="Kac particle system and propagation-of-chaos experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a TOML config (workers from KACSIM_WORKERS)")
    run.add_argument("config", type=Path)

    report = sub.add_parser("report", help="summarize a finished run directory")
    report.add_argument("run_dir", type=Path)

    validate = sub.add_parser("validate", help="check a config without running it")
    validate.add_argument("config", type=Path)

    sub.add_parser("version", help="tool name, version and numerical stack")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_VALIDATION
    setup_logging(args.verbose)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
