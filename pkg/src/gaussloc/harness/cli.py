"""``gaussloc`` command line.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 invalid config or
input, 3 instance over the exact-computation budget.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..core import BudgetExceeded
from .config import ConfigError, load_config
from .runner import emit_summary, execute, write_result

EXIT_OK, EXIT_ASSERT, EXIT_INVALID, EXIT_BUDGET = 0, 1, 2, 3

log = logging.getLogger("gaussloc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussloc", description="Exact and Monte Carlo experiments on Gaussian disordered Gibbs measures.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--replicas", type=int)
    run.add_argument("--out", help="output directory (overrides the config's output field)")
    summ = sub.add_parser("summarize", help="write plot-ready plot.csv for a run directory")
    summ.add_argument("directory")
    sub.add_parser("selftest", help="run the fast invariant suite")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _run(args)
    if args.command == "summarize":
        try:
            path = emit_summary(args.directory)
        except (FileNotFoundError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(path)
        return EXIT_OK
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_ASSERT


def _run(args) -> int:
    overrides = {"seed": args.seed, "replicas": args.replicas, "output": args.out}
    for key, value in overrides.items():
        if value is not None:
            log.info("command-line flag overrides config field %s = %r", key, value)
    try:
        cfg = load_config(args.config, overrides)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = execute(cfg)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = write_result(result, cfg.output)
    for a in result.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'}  {a.name}  ({a.lhs:.6g} vs {a.rhs:.6g})")
    print(f"wrote {out}/results.csv and {out}/summary.json")
    if not result.passed:
        for a in result.failures:
            print(f"assertion failed: {a.name}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
