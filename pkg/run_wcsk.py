#!/usr/bin/env python3
"""
CLI tool for the weighted cscK lab
Usage: python run_wcsk.py verify|solve|audit --config <path> [--threads N] [--out DIR]

Committed configs:
  configs/verify_default.toml   identity battery and inequality audits
  configs/solve_roster.toml     sphere roster through oracle and Newton
  configs/audit_roster.toml     entropy, trace and convergence audits
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd

# Add package directory to path
sys.path.insert(0, str(Path(__file__).parent))

from wcsk.config import ConfigError, RunConfig, load_config
from wcsk.weights import ExpressionSyntaxError, InvalidWeightError, WeightDomainError, WeightPair
from wcsk.identity_suite import PotentialRejectedError, run_battery
from wcsk.sphere_solver import (
    NonpositiveProfileError,
    SolverError,
    compare_with_oracle,
    compute_estimates,
    duistermaat_heckman_distance,
    entropy_family,
    grid_convergence,
    grid_convergence_holds,
    reconstructed_residual,
    solve_newton,
    solve_quadrature,
)
from wcsk.report import (
    format_audit_report,
    format_estimates,
    format_failed_estimates,
    format_failed_solution,
    format_solution,
    save_failure_summary,
    save_report_json,
    save_solution_csv,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

CONFIG_ERRORS = (ConfigError, InvalidWeightError, ExpressionSyntaxError, WeightDomainError)
RUN_ERRORS = (SolverError, NonpositiveProfileError, PotentialRejectedError)


def run_verify(config: RunConfig, roster: Tuple[WeightPair, ...], out: Path, threads: int) -> List[str]:
    """Identity battery and inequality audits per chart family; returns failed check names"""
    reports = []
    for plan in config.sample_plans(roster):
        print(f"\n🔧 Running battery on '{plan.chart}' ({len(plan.pairs)} weight pairs)...")
        report = run_battery(plan, identities=config.plan.identities, audits=config.plan.audits, threads=threads)
        for entry in report.entries:
            marker = "✅" if entry.passed else "❌"
            print(f"  {marker} {entry.name}: {entry.value:.3e} (tolerance {entry.tolerance:.1e})")
        reports.append(report)

    save_report_json(format_audit_report(reports, config.seed), out / "audit_report.json")
    return [f"{r.chart}:{name}" for r in reports for name in r.failed()]


def _solve_member(config: RunConfig, pair: WeightPair, out: Path):
    """Oracle and Newton solve of one sphere roster member, CSV and trace written"""
    quadrature = solve_quadrature(pair, count=2 * config.solver.N + 1)
    solution = solve_newton(quadrature.pair, **config.solver.newton_kwargs())
    oracle_distance = compare_with_oracle(solution, quadrature.profile)
    residual = reconstructed_residual(solution)

    save_solution_csv(solution.to_frame(), out / f"solution_{pair.name}.csv")
    save_solution_csv(pd.DataFrame(list(solution.iterations)), out / f"trace_{pair.name}.csv")
    return quadrature, solution, oracle_distance, residual


def run_solve(config: RunConfig, roster: Tuple[WeightPair, ...], out: Path) -> List[str]:
    """Sphere roster through the quadrature oracle and Newton; returns failed member names"""
    solutions, failures = [], []
    for pair in roster:
        print(f"\n🧮 Solving '{pair.name}' (N = {config.solver.N})...")
        try:
            quadrature, solution, oracle_distance, residual = _solve_member(config, pair, out)
        except RUN_ERRORS as e:
            print(f"❌ {e}")
            solutions.append(format_failed_solution(pair.name, str(e), getattr(e, "trace", ())))
            failures.append(pair.name)
            continue

        passed = oracle_distance <= config.solver.oracle_tolerance and residual <= config.solver.residual_tolerance
        marker = "✅" if passed else "❌"
        print(f"{marker} a = {quadrature.a:.12g}, b = {quadrature.b:.12g}, "
              f"oracle distance {oracle_distance:.3e}, reconstructed residual {residual:.3e}")
        solutions.append(format_solution(pair.name, quadrature, solution, oracle_distance, residual, passed))
        if not passed:
            failures.append(pair.name)

    save_report_json(
        {"command": "solve", "solutions": solutions, "passed": not failures},
        out / "solve_report.json",
    )
    return failures


def run_audit(config: RunConfig, roster: Tuple[WeightPair, ...], out: Path) -> List[str]:
    """Estimates, entropy family and grid convergence per sphere member; returns failed member names"""
    estimates, failures = [], []
    newton = config.solver.newton_kwargs()
    refinement = {k: v for k, v in newton.items() if k != "count"}
    for pair in roster:
        print(f"\n📊 Auditing '{pair.name}'...")
        try:
            quadrature, solution, oracle_distance, residual = _solve_member(config, pair, out)
            report = compute_estimates(solution, config.audit.epsilon, config.audit.A, config.audit.p_values)
            family = entropy_family(quadrature.pair, members=config.audit.entropy_members)
            convergence = grid_convergence(pair, counts=config.audit.grid_counts, **refinement)
            dh_distance = duistermaat_heckman_distance(solution)
        except RUN_ERRORS as e:
            print(f"❌ {e}")
            estimates.append(format_failed_estimates(pair.name, str(e)))
            failures.append(pair.name)
            continue

        extra = {
            "oracle_equivalence": oracle_distance <= config.solver.oracle_tolerance,
            "reconstructed_residual": residual <= config.solver.residual_tolerance,
            "entropy_family": bool(family["comparison_holds"].all() and family["ratio"].notna().all()),
            "duistermaat_heckman": dh_distance <= config.audit.dh_tolerance,
            "grid_convergence": grid_convergence_holds(
                convergence, config.audit.convergence_factor, config.audit.convergence_floor
            ),
        }
        data = format_estimates(
            pair.name, report, extra_checks=extra,
            diagnostics={"oracle_distance": oracle_distance, "reconstructed_residual": residual, "dh_distance": dh_distance},
            convergence=convergence, family=family,
        )
        save_solution_csv(family, out / f"entropy_family_{pair.name}.csv")
        save_solution_csv(convergence, out / f"convergence_{pair.name}.csv")

        for check, ok in data["checks"].items():
            print(f"  {'✅' if ok else '❌'} {check}")
        estimates.append(data)
        if not data["passed"]:
            failures.append(pair.name)

    save_report_json(
        {"command": "audit", "estimates": estimates, "passed": not failures},
        out / "audit_report.json",
    )
    return failures


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        description="Weighted cscK lab: identity battery, sphere solver and estimate audits",
        epilog=__doc__.split("\n\n", 1)[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=["verify", "solve", "audit"], help="What to run")
    parser.add_argument("--config", type=str, required=True, help="TOML run config (e.g. configs/verify_default.toml)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: [run] threads, 1)")
    parser.add_argument("--out", type=str, default=None, help="Output directory (default: [run] output_dir, results)")
    parser.add_argument("--verbose", action="store_true", help="Log solver iterations and sampling details")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    print(f"🏁 wcsk {args.command}")
    print("=" * 60)

    out = Path(args.out) if args.out else Path("results")
    try:
        config = load_config(Path(args.config))
        if config.run.command != args.command:
            print(f"⚠️  Config is for '{config.run.command}', running '{args.command}'")
        if args.command == "verify" and config.run.seed is None:
            raise ConfigError("[run] seed is mandatory for verify")
        out = Path(args.out) if args.out else Path(config.run.output_dir)
        threads = args.threads or config.run.threads
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        roster = config.weight_pairs() if args.command == "verify" else config.sphere_pairs()
        print(f"✅ Loaded config {args.config} ({len(roster)} weight pairs)")
    except CONFIG_ERRORS as e:
        print(f"❌ Config error: {e}")
        save_failure_summary(out, args.command, EXIT_CONFIG, [], str(e))
        return EXIT_CONFIG

    try:
        if args.command == "verify":
            failures = run_verify(config, roster, out, threads)
        elif args.command == "solve":
            failures = run_solve(config, roster, out)
        else:
            failures = run_audit(config, roster, out)
    except CONFIG_ERRORS as e:
        print(f"❌ Config error: {e}")
        save_failure_summary(out, args.command, EXIT_CONFIG, [], str(e))
        return EXIT_CONFIG

    status = EXIT_FAILED if failures else EXIT_OK
    save_failure_summary(out, args.command, status, failures)
    print("\n" + "=" * 60)
    if failures:
        print(f"❌ {len(failures)} failed: {', '.join(failures)}")
    else:
        print("✅ All checks passed")
    return status


if __name__ == "__main__":
    sys.exit(main())
