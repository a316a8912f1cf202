"""Command line entry point: ``adjointlab {run,validate,list-zoo,demo}``."""
from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources

from ..core import make_grid, validate_problem
from .config import ConfigError, load_config
from .runner import EXIT_ASSERTION, EXIT_CONFIG, EXIT_PASS, run_suite
from .zoo import zoo, zoo_names


def demo_config_path() -> str:
    return str(resources.files("adjointlab").joinpath("data", "demo.yaml"))


def _u64(text):
    val = int(text)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _positive(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adjointlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_out=True):
        if with_out:
            p.add_argument("--out", default=None, help="report directory")
            p.add_argument("--threads", type=_positive, default=1, help="experiments run concurrently")
        p.add_argument("--seed", type=_u64, default=None, help="mixed into every experiment seed")

    p = sub.add_parser("run", help="run a config file")
    p.add_argument("config")
    common(p)
    p = sub.add_parser("validate", help="parse a config and check each problem's derivatives")
    p.add_argument("config")
    common(p, with_out=False)
    sub.add_parser("list-zoo", help="list the named test problems")
    p = sub.add_parser("demo", help="run the shipped acceptance suite")
    common(p)
    return parser


def _print_suite(result, out=sys.stdout):
    if result.error:
        print(f"config error: {result.error}", file=sys.stderr)
        return
    for rep in result.reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status}  {rep.experiment}  ({len(rep.assertions)} assertions, {len(rep.errors)} errors)", file=out)
        for a in rep.assertions:
            if not a["passed"]:
                print(f"      failed {a['kind']}: observed {a['observed']}", file=out)
    print(f"reports in {result.out_dir}", file=out)


def cmd_run(config, out, threads, seed) -> int:
    result = run_suite(config, out or "adjointlab-reports", threads=threads, seed=seed)
    _print_suite(result)
    return result.exit_code


def cmd_validate(config, seed) -> int:
    try:
        specs = load_config(config, global_seed=seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    bad = 0
    for spec in specs:
        prob = spec.problem
        vf, loss, theta, z0 = prob.build()
        for n in spec.grids:
            found = validate_problem(vf, loss, make_grid(prob.t0, prob.t_end, n), theta=theta, z0=z0)
            for v in found:
                bad += 1
                print(f"{spec.name} (n_steps={n}): {v.kind}: {v.message}")
    print(f"{len(specs)} experiments, {bad} problem violations")
    return EXIT_PASS if bad == 0 else EXIT_ASSERTION


def cmd_list_zoo() -> int:
    for name in zoo_names():
        spec = zoo(name)
        print(f"{name:20s} N={len(spec.z0)} P={len(spec.theta)}  {spec.description}")
    return EXIT_PASS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.threads, args.seed)
    if args.command == "validate":
        return cmd_validate(args.config, args.seed)
    if args.command == "list-zoo":
        return cmd_list_zoo()
    return cmd_run(demo_config_path(), args.out or "adjointlab-demo", args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
