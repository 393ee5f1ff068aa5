"""
Report module for the weighted cscK lab
Formats audit, solve and estimate results into JSON schemas, validates them
and writes reports, solution CSVs and the failure summary
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

# Required top-level keys per report kind
REPORT_SCHEMAS: Dict[str, List[str]] = {
    "verify": ["command", "seed", "charts", "passed"],
    "solve": ["command", "solutions", "passed"],
    "audit": ["command", "estimates", "passed"],
}

AUDIT_ENTRY_KEYS = ["name", "anchor", "kind", "value", "tolerance", "margin", "samples", "skipped", "worst_point", "passed"]
SOLUTION_KEYS = ["name", "a", "b", "w", "iterations", "R1", "R2", "oracle_distance", "reconstructed_residual", "passed"]
ESTIMATE_KEYS = ["name", "entropy", "weighted_entropy", "m_v", "b", "checks", "passed"]

CSV_FLOAT_FORMAT = "%.17g"


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become null"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def validate_report_schema(data: Dict[str, Any]) -> bool:
    """
    Validate that report data matches the schema of its command

    Args:
        data: Report dictionary

    Returns:
        True if valid, raises ValueError if invalid
    """
    command = data.get("command")
    if command not in REPORT_SCHEMAS:
        raise ValueError(f"Unknown report command: {command}")
    for key in REPORT_SCHEMAS[command]:
        if key not in data:
            raise ValueError(f"Missing required key: {key}")

    if command == "verify":
        for chart in data["charts"]:
            for i, entry in enumerate(chart.get("entries", [])):
                for key in AUDIT_ENTRY_KEYS:
                    if key not in entry:
                        raise ValueError(f"Entry {i} of chart '{chart.get('chart')}' missing required key: {key}")
    elif command == "solve":
        for i, solution in enumerate(data["solutions"]):
            for key in SOLUTION_KEYS:
                if key not in solution:
                    raise ValueError(f"Solution {i} missing required key: {key}")
    else:
        for i, estimate in enumerate(data["estimates"]):
            for key in ESTIMATE_KEYS:
                if key not in estimate:
                    raise ValueError(f"Estimate {i} missing required key: {key}")
    return True


def format_audit_report(reports: Sequence, seed: int) -> Dict[str, Any]:
    """
    Format AuditReports of every chart family into the verify schema

    Args:
        reports: AuditReport per chart family
        seed: Plan seed

    Returns:
        Dictionary matching the verify schema
    """
    return {
        "command": "verify",
        "seed": seed,
        "charts": [r.to_dict() for r in reports],
        "passed": all(r.passed for r in reports),
    }


def format_solution(
    name: str,
    quadrature,
    solution,
    oracle_distance: float,
    reconstructed_residual: float,
    passed: bool,
) -> Dict[str, Any]:
    """One roster member of the solve report"""
    return {
        "name": name,
        "a": quadrature.a,
        "b": quadrature.b,
        "w": str(quadrature.pair.w),
        "v": str(quadrature.pair.v),
        "N": int(len(solution.nodes)),
        "iterations": [record._asdict() for record in solution.iterations],
        "converged": solution.converged,
        "stalled": solution.stalled,
        "compatibility_shift": list(solution.shift),
        "R1": solution.R1,
        "R2": solution.R2,
        "area": solution.area,
        "boundary_defect": solution.profile.boundary_defect(),
        "oracle_distance": oracle_distance,
        "reconstructed_residual": reconstructed_residual,
        "passed": passed,
    }


def format_failed_solution(name: str, message: str, trace: Sequence = ()) -> Dict[str, Any]:
    return {
        "name": name,
        "a": None,
        "b": None,
        "w": None,
        "iterations": [record._asdict() for record in trace],
        "R1": None,
        "R2": None,
        "oracle_distance": None,
        "reconstructed_residual": None,
        "error": message,
        "passed": False,
    }


def format_estimates(
    name: str,
    report,
    extra_checks: Optional[Dict[str, bool]] = None,
    diagnostics: Optional[Dict[str, float]] = None,
    convergence: Optional[pd.DataFrame] = None,
    family: Optional[pd.DataFrame] = None,
) -> Dict[str, Any]:
    """
    One roster member of the audit report

    Args:
        name: Roster member
        report: EstimateReport of the member's solution
        extra_checks: Hard checks computed outside the report (oracle, family)
        diagnostics: Scalar diagnostics such as the oracle and DH distances
        convergence: grid_convergence table
        family: entropy_family table

    Returns:
        Dictionary with every estimate, the merged checks and the tables
    """
    checks = {**report.checks, **(extra_checks or {})}
    data = {
        "name": name,
        "entropy": report.entropy,
        "weighted_entropy": report.weighted_entropy,
        "m_v": report.m_v,
        "b": report.b,
        "b_bound": report.b_bound,
        "entropy_bound": report.entropy_bound,
        "sup_F": report.sup_F,
        "inf_F": report.inf_F,
        "sup_trace": report.sup_trace,
        "lp_norms": report.lp_norms,
        "sup_gradient": report.sup_gradient,
        "sup_gradient_plus_trace": report.sup_gradient_plus_trace,
        "psi_residual": report.psi_residual,
        "psi_area": report.psi_area,
        "epsilon": report.epsilon,
        "A": report.A,
        "sup_combination": report.sup_combination,
        "eta": report.eta,
        "L": report.L,
        **(diagnostics or {}),
        "checks": checks,
        "passed": all(checks.values()),
    }
    if convergence is not None:
        data["grid_convergence"] = convergence.to_dict(orient="records")
    if family is not None:
        data["entropy_family"] = family.to_dict(orient="records")
    return data


def format_failed_estimates(name: str, message: str) -> Dict[str, Any]:
    return {
        "name": name,
        "entropy": None,
        "weighted_entropy": None,
        "m_v": None,
        "b": None,
        "checks": {},
        "error": message,
        "passed": False,
    }


def save_report_json(data: Dict[str, Any], output_path: Path):
    """
    Save a report to JSON with schema validation

    Args:
        data: Report dictionary
        output_path: Path to save JSON file
    """
    validate_report_schema(data)
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w") as f:
        json.dump(to_jsonable(data), f, indent=2, allow_nan=False)
    print(f"✅ Report saved to {output_path}")


def save_solution_csv(frame: pd.DataFrame, output_path: Path):
    """Save solution fields (x, theta, phi, F, mu, Scal_v, w) with 17 significant digits"""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_path, index=False, float_format=CSV_FLOAT_FORMAT)


def save_failure_summary(output_dir: Path, command: str, status: int, failures: Sequence[str], message: str = "") -> Path:
    """
    Machine-readable summary written on every run

    Args:
        output_dir: Run output directory
        command: verify, solve, audit or "config"
        status: Exit status
        failures: Names of failed checks or roster members
        message: Error text, if any

    Returns:
        Path of failure_summary.json
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "failure_summary.json"
    with open(path, "w") as f:
        json.dump(
            to_jsonable({"command": command, "status": status, "failures": list(failures), "message": message}),
            f, indent=2, allow_nan=False,
        )
    return path
