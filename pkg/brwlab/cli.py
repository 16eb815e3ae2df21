"""
Command line interface.

Usage:
    brwlab <experiment> [--preset NAME] [--config FILE] [--seed N] [--out DIR] [--reps N] [--mode float|rational]
    brwlab run --preset NAME            # kind taken from the preset or config file
    brwlab presets
    brwlab rerun MANIFEST [--out DIR]

Values are layered: preset, then config file, then command line flags.

Exit codes:
    0 ok, 2 configuration error, 3 resource error or truncation, 4 internal consistency failure
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from brwlab.api.experiments import rerun_manifest, run_experiment
from brwlab.api.presets import list_presets, preset_values
from brwlab.converters.spec_parser import parse_config_text
from brwlab.core.config import settings
from brwlab.core.exceptions import EXIT_CONFIG, EXIT_OK, ConfigurationError, exit_code_for
from brwlab.core.logging import get_logger, setup_logging
from brwlab.core.metrics import initialize_metrics
from brwlab.schemas.experiment import EXPERIMENT_KINDS, ExperimentConfig

logger = get_logger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--preset", help="Start from a named preset (see 'brwlab presets')")
    parent.add_argument("--config", type=Path, help="Config file of 'key = expression' lines")
    parent.add_argument("--seed", type=int, help="Base seed")
    parent.add_argument("--out", type=Path, help=f"Output directory (default: {settings.output_dir})")
    parent.add_argument("--reps", type=int, help="Number of replications")
    parent.add_argument("--mode", choices=["float", "rational"], help="Arithmetic mode")
    parent.add_argument("--log-level", default=None, help="Log level (default: LOG_LEVEL)")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brwlab",
        description="Branching random walk experiments on trees, lattices and their products",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # List presets
  brwlab presets

  # Reproduce the T3 x Z ends experiment with a different seed
  brwlab ends --preset t3xz-critical-ends --seed 7

  # Run a config file
  brwlab run --config my-experiment.cfg --out results/

  # Re-run a finished experiment from its manifest
  brwlab rerun results/manifest.json --out rerun/
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()
    for kind in EXPERIMENT_KINDS:
        sub.add_parser(kind, parents=[common], help=f"Run a {kind} experiment")
    sub.add_parser("run", parents=[common], help="Run the experiment kind named by the preset or config")
    sub.add_parser("presets", help="List presets")
    rerun = sub.add_parser("rerun", help="Re-execute the config recorded in a manifest")
    rerun.add_argument("manifest", type=Path)
    rerun.add_argument("--out", type=Path, help="Output directory (default: the recorded one)")
    rerun.add_argument("--log-level", default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """
    Layer preset, config file and flags into one config.

    Raises:
        ConfigurationError: unreadable config file or a kind mismatch
        ValidationError: values the config model rejects
    """
    values: Dict[str, Any] = {}
    if args.preset:
        values.update(preset_values(args.preset))
    if args.config:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"cannot read config file {args.config}: {e}")
        values.update(parse_config_text(text))
    flags = {"seed": args.seed, "replications": args.reps, "mode": args.mode}
    if args.out is not None:
        flags["out_dir"] = str(args.out)
    values.update({k: v for k, v in flags.items() if v is not None})
    if "reps" in values and "replications" in values:
        values.pop("reps")

    if args.command != "run":
        if values.get("kind", args.command) != args.command:
            raise ConfigurationError(
                f"command {args.command!r} does not match the configured kind {values['kind']!r}"
            )
        values["kind"] = args.command
    elif "kind" not in values:
        raise ConfigurationError("'brwlab run' needs a preset or config file that sets kind")
    return ExperimentConfig.model_validate(values)


def _print_presets() -> None:
    presets = list_presets()
    width = max(len(p.name) for p in presets)
    for preset in presets:
        print(f"{preset.name:<{width}}  {preset.description}")


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``brwlab`` console script; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level if "log_level" in args else None)

    if args.command == "presets":
        _print_presets()
        return EXIT_OK

    initialize_metrics()
    try:
        if args.command == "rerun":
            manifest = rerun_manifest(args.manifest, args.out)
        else:
            manifest = run_experiment(config_from_args(args))
    except ValidationError as e:
        logger.error(f"[HARNESS] invalid configuration: {e}")
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"[HARNESS] experiment failed with exit code {code}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return code

    print(f"{manifest.config.kind}: {len(manifest.outputs)} files written")
    for name in manifest.outputs:
        print(f"  {name}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
