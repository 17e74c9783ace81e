"""Command line: ``metasrm run | summarize | presets list | validate-config``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import KEYS, ConfigError, build_config, parse_overrides, read_config_file
from .core import PreconditionError
from .harness import MalformedResult, run_experiment, summarize
from .presets import PRESETS, preset

log = logging.getLogger("metasrm")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load(args) -> dict:
    values: dict[str, str] = {}
    if getattr(args, "preset", None):
        try:
            values.update(preset(args.preset))
        except KeyError:
            raise ConfigError(f"unknown preset {args.preset!r}; see 'metasrm presets list'") from None
    if getattr(args, "config", None):
        try:
            values.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    values.update(parse_overrides(args.set))
    for flag in ("seed", "replications", "output", "workers"):
        value = getattr(args, flag, None)
        if value is not None:
            values[flag] = str(value)
    return values


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", help="start from a shipped preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metasrm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write the result CSV")
    _add_config_args(run)
    run.add_argument("--output", "-o")

    val = sub.add_parser("validate-config", help="check a config without running it")
    _add_config_args(val)
    val.add_argument("--output", "-o")

    summ = sub.add_parser("summarize", help="per-task means and standard errors of a result CSV")
    summ.add_argument("results")
    summ.add_argument("--output", "-o")
    summ.add_argument("--no-pointwise-best", action="store_true")
    summ.add_argument("--mode", choices=("bayes-monte-carlo", "frequentist"), default="bayes-monte-carlo")

    pre = sub.add_parser("presets", help="list shipped presets")
    pre_sub = pre.add_subparsers(dest="presets_command", required=True)
    pre_sub.add_parser("list")
    show = pre_sub.add_parser("show")
    show.add_argument("name")

    sub.add_parser("keys", help="print the config schema")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            cfg = build_config(_load(args))
            if cfg.output is None:
                raise ConfigError("output: no output path (use --output)")
            path = run_experiment(cfg)
            log.info("wrote %s", path)
        elif args.command == "validate-config":
            cfg = build_config(_load(args))
            print(f"ok: {cfg.family}, K={cfg.K}, d={cfg.dim}, m={cfg.m}, n={cfg.n}, "
                  f"R={cfg.replications}, agents={','.join(cfg.agent_tags())}")
        elif args.command == "summarize":
            text = summarize(args.results, args.output, not args.no_pointwise_best, args.mode)
            if args.output is None:
                sys.stdout.write(text)
        elif args.command == "presets":
            if args.presets_command == "list":
                for name, values in PRESETS.items():
                    print(f"{name}: family={values['family']}, K={values['K']}, m={values['m']}")
            else:
                try:
                    values = preset(args.name)
                except KeyError:
                    raise ConfigError(f"unknown preset {args.name!r}") from None
                for k, v in values.items():
                    print(f"{k} = {v}")
        elif args.command == "keys":
            for k, desc in KEYS.items():
                print(f"{k:18s} {desc}")
    except (ConfigError, MalformedResult, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, PreconditionError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
