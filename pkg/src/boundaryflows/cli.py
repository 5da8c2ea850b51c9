"""Command-line front end for the scenario pipelines.

Subcommands: list-scenarios (bundled configs), run FILE... (execute
scenarios), catalog (built-in groups), selftest (the full gate suite).
The exit code is 0 only when every scenario or gate passed.
"""

import argparse
import os
import sys

from . import acceptance
from . import experiments
from . import groups


def cmd_list_scenarios(args):
    for path in experiments.bundled_scenarios():
        scenario = experiments.load_scenario(path)
        print(f"{os.path.basename(path):32s} {scenario.pipeline:20s} "
              f"id={scenario.id}")
    return 0


def cmd_run(args):
    all_passed = True
    for path in args.files:
        try:
            scenario = experiments.load_scenario(path)
        except experiments.ConfigError as exc:
            print(f"ERROR {path}: {exc}", file=sys.stderr)
            return 2
        out_dir = (os.path.join(args.out, scenario.id)
                   if args.out else None)
        try:
            manifest = experiments.run_scenario(
                scenario, out_dir=out_dir, seed=args.seed,
                tol_profile=args.tol_profile)
        except experiments.ExperimentError as exc:
            print(f"ERROR {scenario.id}: {exc}", file=sys.stderr)
            all_passed = False
            continue
        report = manifest["report"]
        status = "PASS" if report.get("passed") else "FAIL"
        all_passed = all_passed and bool(report.get("passed"))
        target = out_dir or scenario.output_dir or os.path.join(
            os.getcwd(), scenario.id)
        print(f"{status} {scenario.id} ({scenario.pipeline}) "
              f"verdict={report.get('verdict')} -> {target}")
    return 0 if all_passed else 1


def cmd_catalog(args):
    catalog = groups.builtin_catalog()
    for name in sorted(catalog):
        G = catalog[name]
        print(f"{name:16s} dim={G.dimension} chart_dim={G.chart_dim} "
              f"generators={len(G.generators)} "
              f"cocompact_hint={G.cocompact_hint}")
    return 0


def cmd_selftest(args):
    results = acceptance.run_all()
    failed = [name for name, passed, _ in results if not passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 0 if not failed else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="boundaryflows",
        description="Scenario runner for boundary-map renormalization "
                    "experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("list-scenarios",
                       help="list the scenario files shipped with the "
                            "package")
    p.set_defaults(func=cmd_list_scenarios)

    p = sub.add_parser("run", help="run one or more scenario files")
    p.add_argument("files", nargs="+", metavar="FILE",
                   help="TOML scenario file(s)")
    p.add_argument("--out", metavar="DIR", default=None,
                   help="write artifacts under DIR/<scenario-id> instead "
                        "of the configured output_dir")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.add_argument("--tol-profile", choices=sorted(experiments.TOL_PROFILES),
                   default="default", help="tolerance profile for the "
                                           "pass/fail gates")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("catalog", help="list the built-in groups")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("selftest",
                       help="run the acceptance gate suite (one PASS/FAIL "
                            "line per criterion)")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
