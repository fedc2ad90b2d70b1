"""Command line entry point: ``sqgfem <experiment> [--key value ...]``.

Exit status is 0 on success, 2 for configuration errors and 3 when a
numerical solve fails.  ``SQGFEM_OUTPUT_DIR`` overrides the output
directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from .config import EXPERIMENTS, ExperimentConfig, config_from_mapping, load_config
from .errors import ConfigError, InvalidArgumentError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

_SKIP = {"experiment"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(ExperimentConfig):
        if f.name in _SKIP:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            parser.add_argument(flag, dest=f.name, default=None, metavar="BOOL",
                                help=f"true/false (default {str(default).lower()})")
        elif isinstance(default, tuple):
            parser.add_argument(flag, dest=f.name, default=None, metavar="LIST",
                                help=f"comma separated (default {','.join(map(str, default))})")
        elif f.name == "seed":
            parser.add_argument(flag, dest=f.name, default=None, type=int,
                                help="random seed (required unless given in --config)")
        else:
            parser.add_argument(flag, dest=f.name, default=None, metavar=type(default).__name__.upper(),
                                help=f"default {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqgfem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key=value or JSON file; flags override its values")
        _add_config_flags(p)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(load_config(args.config).to_dict())
        values.pop("experiment", None)
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if f.name not in _SKIP and v is not None:
            values[f.name] = v
    values["experiment"] = args.experiment
    return config_from_mapping(values)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"sqgfem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiments import run_experiment

    try:
        result = run_experiment(cfg)
    except NumericalError as exc:
        extra = f" (residual {exc.residual:.3e})" if exc.residual is not None else ""
        print(f"sqgfem: numerical failure: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InvalidArgumentError, OSError) as exc:
        print(f"sqgfem: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"output": str(result.output), **result.summary}, indent=2, default=float))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
