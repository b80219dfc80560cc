"""Command line entry point.

    spdegirsanov simulate     --config FILE [--path-csv FILE]
    spdegirsanov verify       --config FILE --experiment NAME
    spdegirsanov convergence  --config FILE
    spdegirsanov report       --input REPORT.json --format csv

Exit status: 0 when every verdict passes, 1 when any fails (or a path
fails), 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import SimulationError, SPDEGirsanovError
from .experiments import Experiment, run_experiment, simulate_summary
from .integrator import simulate_path
from .noise import RngStream, sample_noise
from .report import emit_report, load_report
from .scenarios import CONFIG_DIR, build_scenario, load_config

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _resolve_config(name):
    p = Path(name)
    if p.exists():
        return p
    bundled = CONFIG_DIR / f"{p.stem}.ini"
    return bundled if bundled.exists() else p


def _common(p):
    p.add_argument("--config", required=True,
                   help="INI file, or the name of a bundled configuration (e.g. closed_form)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    p.add_argument("--steps", type=int, help="uniform time steps")
    p.add_argument("--pairing", choices=("h", "htilde"), help="inner product for weighted pairings")
    p.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
    _output(p)


def _output(p):
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="json")


def build_parser():
    parser = argparse.ArgumentParser(prog="spdegirsanov", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="simulate an ensemble and summarize it")
    _common(p)
    p.add_argument("--path-csv", help="also write path 0 as a CSV trajectory")
    p = sub.add_parser("verify", help="run one verification experiment")
    _common(p)
    p.add_argument("--experiment", required=True, help=", ".join(e.name for e in Experiment))
    p = sub.add_parser("convergence", help="Galerkin truncation error table")
    _common(p)
    p = sub.add_parser("report", help="re-emit a saved JSON report")
    p.add_argument("--input", required=True)
    _output(p)
    return parser


def _scenario(args):
    spec = load_config(_resolve_config(args.config))
    spec = spec.with_overrides(seed=args.seed, paths=args.paths, steps=args.steps, pairing=args.pairing)
    return build_scenario(spec)


def _write(bundle, args):
    text = emit_report(bundle, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    for name, ok in bundle.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}", file=sys.stderr)
    return EXIT_PASS if bundle.passed else EXIT_FAIL


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return _write(load_report(args.input), args)
        scenario = _scenario(args)
        if args.command == "simulate":
            bundle = simulate_summary(scenario, args.workers)
            if args.path_csv:
                cfg = scenario.config()
                noise = sample_noise(cfg.dimension, cfg.grid, scenario.marks, scenario.intensity,
                                     RngStream(scenario.spec.seed, 0))
                path = simulate_path(cfg, scenario.coefficients, scenario.marks, scenario.intensity, noise)
                Path(args.path_csv).write_text(path.to_csv())
        elif args.command == "verify":
            bundle = run_experiment(scenario, args.experiment, args.workers)
        else:
            bundle = run_experiment(scenario, Experiment.GALERKIN, args.workers)
        return _write(bundle, args)
    except SimulationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL
    except (SPDEGirsanovError, ValueError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
