"""Command-line entry point.

Subcommands: run <config>, validate <config>, list-experiments,
describe <id>.  Exit codes: 0 success, 1 a verdict failed, 2 invalid
configuration or arguments.
"""

from __future__ import annotations

import argparse
import inspect
import sys

from ..errors import ConfigInvalidError, ExperimentFailedError
from .config import parse_config
from .experiments import EXPERIMENTS, experiment_ids
from .runner import run


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="reebflow",
        description="Convergence experiments for fast-advection averaging "
                    "on Reeb graphs",
    )
    sub = p.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute the experiments in a config")
    p_run.add_argument("config", help="path to the run configuration")
    p_val = sub.add_parser("validate", help="parse and validate a config")
    p_val.add_argument("config", help="path to the run configuration")
    sub.add_parser("list-experiments", help="list experiment ids")
    p_desc = sub.add_parser("describe", help="describe one experiment")
    p_desc.add_argument("id", help="experiment id")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for exp_id in experiment_ids():
            _, desc = EXPERIMENTS[exp_id]
            print(f"{exp_id:20s} {desc}")
        return 0
    if args.command == "describe":
        if args.id not in EXPERIMENTS:
            print(f"unknown experiment {args.id!r}; known: {experiment_ids()}",
                  file=sys.stderr)
            return 2
        fn, desc = EXPERIMENTS[args.id]
        print(f"{args.id}: {desc}")
        print(inspect.getdoc(fn) or "")
        print("\ndefaults:")
        sig = inspect.signature(fn)
        for name, par in sig.parameters.items():
            if par.default is not inspect.Parameter.empty:
                print(f"  {name} = {par.default!r}")
        return 0
    if args.command == "validate":
        try:
            cfg = parse_config(args.config)
        except (ConfigInvalidError, FileNotFoundError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
        print(f"ok: {len(cfg.experiments)} experiment(s), seed {cfg.seed}")
        return 0
    # run
    try:
        cfg = parse_config(args.config)
    except (ConfigInvalidError, FileNotFoundError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        code = run(cfg)
    except ExperimentFailedError as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    raise SystemExit(main())
