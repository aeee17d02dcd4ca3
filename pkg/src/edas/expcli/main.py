"""``edas`` command line."""

import argparse
import sys

from ..exceptions import ConfigError, EdasError, InvalidArgument, MissingArtifact, NumericalFailure
from .config import ExperimentConfig
from .stages import STAGES, run_pipeline, run_stage

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="edas", description="Translation-augmented offline RL pipeline")
    p.add_argument("command", choices=[*STAGES, "pipeline"])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", default="runs/default", help="artifact directory")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = ExperimentConfig.load(args.config, overrides)
        if args.command == "pipeline":
            run_pipeline(cfg, args.out)
        else:
            run_stage(args.command, cfg, args.out)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, InvalidArgument) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EdasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
