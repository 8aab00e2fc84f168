"""Command-line entry point: ``conradlab {train,eval,filter,baselines,ood}``.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from conradlab.runio import COMMANDS, ConfigError, MissingArtifact, RunConfig, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("conradlab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conradlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="key=value config file (defaults if omitted)")
    parser.add_argument("--out", type=Path, help="artifact directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="override master_seed")
    parser.add_argument("--checkpoint", type=Path,
                        help="checkpoint to write (train) or read (other commands); "
                             "defaults to <out>/checkpoint.npz")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage, which already matches the config-error code
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None and not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be a 64-bit unsigned integer")
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        if args.out is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(args.out))
        art = run_experiment(cfg, args.command, checkpoint=args.checkpoint)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except MissingArtifact as e:
        log.error("%s", e)
        return EXIT_MISSING
    except FloatingPointError as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC
    print(json.dumps({"out": str(art.out_dir), "files": [Path(f).name for f in art.files]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
