"""Command-line entry point.

Subcommands mirror the library surface: ``run`` simulates one seeded run
and writes its trace directory, ``monte-carlo`` aggregates an ensemble,
``check-feasibility`` prints the full design report, and ``bounds`` emits
the offline worst-case error-bound envelopes.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys

from . import harness
from .core import ConfigError, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonsec",
        description="Resilient estimation, attack detection, and formation "
                    "control for a vehicle string with compromised sensors.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one run and write its trace directory")
    p.add_argument("--config", required=True, metavar="FILE",
                   help="scenario JSON document")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="directory for scenario.json, feasibility.json, "
                        "trace.csv, detection.csv, summary.json")

    p = sub.add_parser("monte-carlo", help="aggregate many independent runs")
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--runs", required=True, type=int,
                   help="number of independent runs")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; run k uses base + k")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="directory for the aggregate summary and metrics")

    p = sub.add_parser("check-feasibility",
                       help="print the design report (threshold interval, gain "
                            "margins, spectra, bounds) as JSON")
    p.add_argument("--config", required=True, metavar="FILE")

    p = sub.add_parser("bounds",
                       help="emit offline error-bound envelopes (detection "
                            "sets held empty) as CSV")
    p.add_argument("--config", required=True, metavar="FILE")
    p.add_argument("--out", default=None, metavar="FILE",
                   help="CSV destination (default: stdout)")
    return parser


def _cmd_run(args) -> int:
    config = load_scenario(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    traces = harness.run_simulation(config)
    harness.write_run_dir(args.out, config, traces)
    print(json.dumps(harness.summarize_run(config, traces), indent=2))
    return 0


def _cmd_monte_carlo(args) -> int:
    config = load_scenario(args.config)
    summary = harness.monte_carlo(config, args.runs, args.seed)
    harness.write_monte_carlo_dir(args.out, config, summary)
    digest = {"runs": summary.runs, "horizon": summary.horizon,
              "phi_start": float(summary.phi[0]) if len(summary.phi) else None,
              "phi_final": float(summary.phi[-1]) if len(summary.phi) else None}
    print(json.dumps(digest, indent=2))
    return 0


def _cmd_check_feasibility(args) -> int:
    config = load_scenario(args.config)
    report = harness.feasibility_report(config)
    print(json.dumps(report, indent=2, default=harness._json_default))
    return 0


def _cmd_bounds(args) -> int:
    config = load_scenario(args.config)
    rows = harness.bound_envelopes(config)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "i", "rho", "lambda", "tau", "alpha"])
        for t, i, rho, lam, tau, alpha in rows:
            w.writerow([str(t), str(i), harness._fmt(rho), harness._fmt(lam),
                        harness._fmt(tau), harness._fmt(alpha)])
    finally:
        if args.out:
            out.close()
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "monte-carlo": _cmd_monte_carlo,
    "check-feasibility": _cmd_check_feasibility,
    "bounds": _cmd_bounds,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, harness.SimulationError) as exc:
        logging.getLogger("platoonsec").error("%s", exc)
        return 2
    except OSError as exc:
        logging.getLogger("platoonsec").error("i/o failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
