"""Command-line entry point: ``semg2v <stage|all> [--config FILE] [--set key=value ...]``."""

import argparse
import logging
import sys

from .config import ConfigError, PipelineConfig, format_config
from .dataset import ModeError
from .pipeline import STAGES, MissingArtifact, is_numeric_failure, run

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="semg2v", description="Silent EMG to voice pipeline.")
    p.add_argument("command", choices=STAGES + ("all", "default-config"))
    p.add_argument("--config", help="flat 'key = value' file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--force", action="store_true", help="rerun even when outputs are current")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "default-config":
        sys.stdout.write(format_config(PipelineConfig()))
        return EXIT_OK
    try:
        done = run(args.command, args.config, args.overrides, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ModeError, ValueError, RuntimeError, OSError) as exc:
        if is_numeric_failure(exc):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    stages = STAGES if args.command == "all" else (args.command,)
    flags = done if isinstance(done, list) else [done]
    for stage, ran in zip(stages, flags):
        print(f"{stage}: {'done' if ran else 'skipped (up to date)'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
