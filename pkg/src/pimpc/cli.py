"""Command line front end: design checks, single runs, variant sweeps.

Three subcommands cover the whole workflow::

    pimpc check <scenario>
    pimpc run <scenario> --variant pi-mpc --out results/
    pimpc compare <scenario> --out results/

``<scenario>`` is either a path to a scenario file or the name of one of
the shipped scenarios (``pimpc.config.builtin_scenarios``).  Run outputs
land under ``<out>/<scenario-name>/<variant>/`` as ``series.csv`` plus
``summary.json``; ``compare`` adds ``comparison.csv`` and
``comparison.json`` one level up.  Noise-free runs write byte-identical
files on every invocation with the same config.

Exit codes are a stable contract: 0 success, 1 design-check failure,
2 config error, 3 simulation fault.
"""

from __future__ import annotations

import argparse
import pathlib
import sys
from dataclasses import dataclass
from typing import Optional

from .config import (
    ConfigError,
    Scenario,
    builtin_scenario_path,
    builtin_scenarios,
    load_scenario,
)
from .harness import (
    DesignError,
    SimulationFault,
    compare_variants,
    design,
    run_closed_loop,
    write_comparison,
    write_series,
    write_summary,
)
from .mpc import VARIANTS

__all__ = ["RunConfig", "main"]

EXIT_OK = 0
EXIT_DESIGN = 1
EXIT_CONFIG = 2
EXIT_FAULT = 3


@dataclass(frozen=True)
class RunConfig:
    """Resolved options for one ``run`` invocation."""

    scenario_path: pathlib.Path
    variant: str
    outdir: pathlib.Path
    seed: Optional[int] = None
    periods: Optional[int] = None
    verbose: bool = False


def _resolve_scenario(arg: str) -> pathlib.Path:
    """Accept a file path or the name of a shipped scenario."""
    path = pathlib.Path(arg)
    if path.exists():
        return path
    if arg in builtin_scenarios():
        return builtin_scenario_path(arg)
    known = ", ".join(builtin_scenarios())
    raise ConfigError(f"no such scenario file or builtin name {arg!r} "
                      f"(builtins: {known})")


def _load(arg: str) -> Scenario:
    return load_scenario(_resolve_scenario(arg))


def _print_checks(checks, stream) -> None:
    for c in checks:
        mark = "ok " if c.passed else "FAIL"
        print(f"  [{mark}] {c.name}: {c.detail}", file=stream)


def cmd_check(scenario_arg: str) -> int:
    """Run every design-time check for all three variants and report."""
    try:
        scenario = _load(scenario_arg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"scenario {scenario.name}: kind={scenario.kind} "
          f"N={scenario.period} dt={scenario.dt}")
    failed = False
    for variant in VARIANTS:
        print(f"variant {variant}:")
        try:
            dz = design(scenario, variant)
        except DesignError as exc:
            _print_checks(exc.checks, sys.stdout)
            failed = True
            continue
        _print_checks(dz.checks, sys.stdout)
    if failed:
        print("design checks FAILED", file=sys.stderr)
        return EXIT_DESIGN
    print("all design checks passed")
    return EXIT_OK


def _run_dir(outdir: pathlib.Path, scenario: Scenario, variant: str
             ) -> pathlib.Path:
    return outdir / scenario.name / variant


def _write_run(result, rundir: pathlib.Path) -> None:
    write_series(result, rundir / "series.csv")
    write_summary(result, rundir / "summary.json")


def cmd_run(rc: RunConfig) -> int:
    """Execute one closed-loop run and write its series and summary."""
    try:
        scenario = load_scenario(rc.scenario_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dz = design(scenario, rc.variant)
    except DesignError as exc:
        print(f"design checks failed for variant {rc.variant}:",
              file=sys.stderr)
        _print_checks(exc.checks, sys.stderr)
        return EXIT_DESIGN
    if rc.verbose:
        _print_checks(dz.checks, sys.stdout)
    rundir = _run_dir(rc.outdir, scenario, rc.variant)
    try:
        result = run_closed_loop(scenario, dz, periods=rc.periods,
                                 seed=rc.seed)
    except SimulationFault as exc:
        # Dump everything recorded up to the last good step so the
        # failure can be inspected offline.
        _write_run(exc.partial, rundir)
        fault = exc.partial.fault
        print(f"simulation fault at step {fault['step']}: "
              f"{fault['message']}", file=sys.stderr)
        print(f"partial outputs written to {rundir}", file=sys.stderr)
        return EXIT_FAULT
    _write_run(result, rundir)
    summary = result.summary()
    print(f"{scenario.name} {rc.variant}: {result.periods} periods, "
          f"final-period mean error {summary['final_period']['mean_error']:.6e}")
    if rc.verbose:
        print(f"outputs written to {rundir}")
    return EXIT_OK


def cmd_compare(scenario_arg: str, outdir: pathlib.Path,
                seed: Optional[int] = None,
                periods: Optional[int] = None) -> int:
    """Run all three variants under identical seeds and tabulate errors."""
    try:
        scenario = _load(scenario_arg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cmp = compare_variants(scenario, periods=periods, seed=seed)
    base = outdir / scenario.name
    for variant in VARIANTS:
        result = cmp.results.get(variant)
        if result is not None:
            _write_run(result, base / variant)
        status = cmp.statuses[variant]
        err = cmp.final_errors.get(variant)
        shown = "-" if err is None else f"{err:.6e}"
        print(f"{variant:12s} {status:12s} final-period mean error {shown}")
    write_comparison(cmp, base)
    if cmp.equivalent:
        print("variants equivalent within tolerance")
    elif cmp.ordering_ok is not None:
        verdict = "holds" if cmp.ordering_ok else "does NOT hold"
        print(f"error ordering pi-mpc < offset-free < standard {verdict}")
    statuses = cmp.statuses.values()
    if any(s.startswith("fault") for s in statuses):
        return EXIT_FAULT
    if any(s.startswith("design-error") for s in statuses):
        return EXIT_DESIGN
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pimpc",
        description="Periodic-disturbance MPC: design checks, closed-loop "
                    "runs, and variant comparisons.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser(
        "check", help="run all design-time checks for a scenario")
    p_check.add_argument("scenario",
                         help="scenario file or builtin scenario name")

    p_run = sub.add_parser(
        "run", help="run one closed-loop simulation and write outputs")
    p_run.add_argument("scenario",
                       help="scenario file or builtin scenario name")
    p_run.add_argument("--variant", choices=list(VARIANTS),
                       default="pi-mpc", help="controller variant")
    p_run.add_argument("--out", required=True, type=pathlib.Path,
                       help="output directory root")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's noise seed")
    p_run.add_argument("--periods", type=int, default=None,
                       help="override the scenario's period count")
    p_run.add_argument("-v", "--verbose", action="store_true",
                       help="print design checks and output paths")

    p_cmp = sub.add_parser(
        "compare", help="run all three variants and write a comparison")
    p_cmp.add_argument("scenario",
                       help="scenario file or builtin scenario name")
    p_cmp.add_argument("--out", required=True, type=pathlib.Path,
                       help="output directory root")
    p_cmp.add_argument("--seed", type=int, default=None,
                       help="override the scenario's noise seed")
    p_cmp.add_argument("--periods", type=int, default=None,
                       help="override the scenario's period count")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "check":
        return cmd_check(args.scenario)
    if args.command == "run":
        try:
            path = _resolve_scenario(args.scenario)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        rc = RunConfig(scenario_path=path, variant=args.variant,
                       outdir=args.out, seed=args.seed,
                       periods=args.periods, verbose=args.verbose)
        return cmd_run(rc)
    return cmd_compare(args.scenario, args.out, seed=args.seed,
                       periods=args.periods)


if __name__ == "__main__":
    sys.exit(main())
