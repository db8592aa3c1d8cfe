"""
Command-line entry point.

    python -m app.main run scenario.json [--out DIR] [--threads N]
    python -m app.main preset fig3b [--out DIR] [--seed N] [--threads N]
    python -m app.main list-presets
    python -m app.main validate scenario.json
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pythonjsonlogger import jsonlogger

from app.core.config import Settings, settings, validate_and_log_configuration
from app.core.exceptions import ConfigurationException
from app.models.scenario import load_scenario
from app.tasks.presets import get_preset, list_presets
from app.tasks.runner import run_config, run_scenario

logger = logging.getLogger(__name__)

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(settings: Settings) -> None:
    """Install a text or JSON root handler according to the settings."""
    handler = logging.StreamHandler(sys.stderr)
    if settings.log_format == "json":
        handler.setFormatter(jsonlogger.JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if settings.debug else settings.log_level)


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="qwalk",
        description="Discrete-time quantum walk simulator with topological edge-state analysis",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m app.main list-presets
  python -m app.main preset fig3b --out results/fig3b
  python -m app.main preset fig5b --seed 7 --threads 4
  python -m app.main validate scenario.json
  python -m app.main run scenario.json

Exit codes: 0 success, 1 configuration error, 2 numerical invariant violation.
        """
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a scenario file")
    run.add_argument("config", type=Path, help="JSON scenario file")
    run.add_argument("--out", type=Path, metavar="DIR",
                     help="Output directory (default: the scenario's output_dir, else QWALK_OUTPUT_DIR/<name>)")
    run.add_argument("--threads", type=int, metavar="N", help="Cap on internal parallelism")

    preset = commands.add_parser("preset", help="Run a named preset")
    preset.add_argument("name", help="Preset name, see list-presets")
    preset.add_argument("--out", type=Path, metavar="DIR", help="Output directory")
    preset.add_argument("--seed", type=int, metavar="N", help="Override the preset seed")
    preset.add_argument("--threads", type=int, metavar="N", help="Cap on internal parallelism")

    commands.add_parser("list-presets", help="List the named presets")

    validate = commands.add_parser("validate", help="Validate a scenario file without running it")
    validate.add_argument("config", type=Path, help="JSON scenario file")

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_arguments(argv)
    configure_logging(settings)

    if args.command == "list-presets":
        for name, description in list_presets():
            print(f"{name:8s} {description}")
        return 0

    if args.command == "validate":
        try:
            config = load_scenario(args.config)
        except ConfigurationException as e:
            print(f"invalid: {e}", file=sys.stderr)
            return e.exit_code
        print(f"valid: {config.name} ({config.analysis_kind.value})")
        return 0

    if args.threads is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return 1
    if not validate_and_log_configuration(settings, logger):
        return 1

    if args.command == "preset":
        try:
            config = get_preset(args.name, seed=args.seed)
        except ConfigurationException as e:
            print(f"error: {e.message}", file=sys.stderr)
            return e.exit_code
        outcome = run_config(config, args.out, args.threads)
    else:
        outcome = run_scenario(args.config, args.out, args.threads)
        if outcome.error and not outcome.manifest:
            context = outcome.error.get("context", {})
            anchor = ":".join(str(context[k]) for k in ("source", "line") if k in context)
            print(f"invalid: {anchor + ': ' if anchor else ''}{outcome.error['message']}", file=sys.stderr)

    if outcome.succeeded:
        print(f"{len(outcome.artifacts)} files written to {outcome.output_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
