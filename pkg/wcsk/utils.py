"""
Utility tables for the weighted cscK lab
Tolerances, default weight rosters, check anchors and small lookups
"""
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

# Tolerances
DOMAIN_TOLERANCE: float = 1e-9
DEGENERACY_THRESHOLD: float = 1e-12
LOG_CONCAVITY_TOLERANCE: float = 1e-10
IDENTITY_TOLERANCE: float = 1e-7
DIVIDED_DIFFERENCE_TOLERANCE: float = 1e-6
COLLAPSE_TOLERANCE: float = 1e-10
INEQUALITY_SLACK: float = 1e-9

# Weight grid (cells per axis, so 513 points on an interval)
GRID_CELLS: int = 512
MAX_GRID_POINTS: int = 2 ** 20

# Unit-area Fubini–Study sphere: physical moment interval [-1/4π, 1/4π]
SPHERE_MOMENT_HALF_WIDTH: float = 1.0 / (4.0 * math.pi)
SPHERE_SCALE: float = 4.0 * math.pi

# Default jet order and the order needed by checks that take one more derivative
JET_ORDER: int = 4
EXTENDED_JET_ORDER: int = 5

CHART_FAMILIES: List[str] = ["sphere", "product", "product_partial"]

# Random potentials
POSITIVITY_MARGIN: float = 0.1
MAX_TRIES: int = 1000
DEFAULT_AMPLITUDES: Tuple[float, ...] = (0.1, 0.25, 0.5)
POINT_CHUNK: int = 64

# Newton solver: continuation in the weights from the round pair
HOMOTOPY_TOLERANCE: float = 1e-6
MIN_HOMOTOPY_STEP: float = 1.0 / 256.0
MAX_HOMOTOPY_STAGES: int = 64
ARMIJO_SLOPE: float = 1e-4

# Grid refinement: residual reduction per doubling, below the floor it counts as converged
CONVERGENCE_FACTOR: float = 4.0
CONVERGENCE_FLOOR: float = 1e-7

# Identity checks: anchor statement and tolerance
IDENTITY_CHECKS: Dict[str, Tuple[str, float]] = {
    "scal_v_forms": (
        "v Scal - 2 Lap v(mu) + v_ab g(xi_a, xi_b) equals 2v times the weighted trace of Ric_v",
        IDENTITY_TOLERANCE,
    ),
    "system_residual": ("v R2 + Scal_v - w = 0 for the (F, phi) system", IDENTITY_TOLERANCE),
    "laplacian_forms": ("-(1/v) d*(v df) equals Lap f + g(d log v(mu), df)", IDENTITY_TOLERANCE),
    "laplacian_trace": ("weighted Laplacian equals weighted trace of dd^c f with mu = d^c f(xi)", IDENTITY_TOLERANCE),
    "differentiated_trace": (
        "d Lambda(beta)(V) = Lambda(nabla0_V beta) - g(beta, nabla0_V omega_phi)",
        DIVIDED_DIFFERENCE_TOLERANCE,
    ),
    "tensor_identities": ("g(df1, S(df2)) = g(S, df1 x df2) = S(grad f1, grad f2)", IDENTITY_TOLERANCE),
    "hessian_splitting": ("dd^c f(., J.) = 2 nabla+ df and nabla- d mu = 0", IDENTITY_TOLERANCE),
    "weight_laplacians": ("Laplacians of v(mu) through v_a, v_ab and the moment map", IDENTITY_TOLERANCE),
    "moment_map": ("mu_phi = mu_0 + d^c phi(xi)", DOMAIN_TOLERANCE),
    "kahler_closed": ("d omega_phi = 0", 1e-10),
    "ricci_v_closed": ("d Ric_v = 0", 1e-8),
    "frame_independence": ("|nabla0 omega_phi|^2 independent of the orthonormal frame", DOMAIN_TOLERANCE),
    "leibniz": ("weighted Laplacian obeys the Leibniz rule", IDENTITY_TOLERANCE),
    "ellipticity": ("principal symbol of the weighted Laplacian is that of Lap_phi", IDENTITY_TOLERANCE),
    "collapse": ("v = 1 reduces every weighted operator to the unweighted one", COLLAPSE_TOLERANCE),
    "self_adjointness": ("weighted Laplacian is self-adjoint for v(mu) omega_phi on the sphere", DIVIDED_DIFFERENCE_TOLERANCE),
}

# Inequality audits: anchor statement
INEQUALITY_CHECKS: Dict[str, str] = {
    "trace_inequalities": "two-sided trace bounds through e^F / v",
    "ricci_trace_bound": "|Lambda_{phi,v} Ric(omega_0)| <= A0 Lambda_phi(omega_0) + C",
    "yau_inequality": "Lap_{phi,v} Lambda_0(omega_phi) >= Lap_0 F - <Hess log v, g0(d mu, d mu)> + |nabla0 omega_phi|^2 - C Lambda_0 Lambda_phi(omega_0) - C",
    "cgp_inequality": "Lap_{phi,v} log Lambda_0(omega_phi) >= (Lap_0 F - <Hess log v, g0(d mu, d mu)>) / Lambda_0 - B Lambda_phi(omega_0)",
    "c2_inequality": "Lap_{phi,v} u >= -C Lambda_0^{3n-3} u for u = e^{F/2}|dF|^2 + K Lambda_0",
    "log_concavity_sign": "<Hess log v(mu), g0(d mu, d mu)> <= 0 for log-concave v",
}


# Default identity roster, in normalized coordinates on [-1, 1]^r.
# name: (v, w, needs rank)
DEFAULT_WEIGHT_ROSTER: Dict[str, Tuple[str, str, int]] = {
    "constant": ("1", "1", 1),
    "exponential": ("(exp x0)", "(add 1 x0)", 1),
    "gaussian": ("(exp (neg (mul x0 x0)))", "(mul 2 x0)", 1),
    "affine": ("(div (add 2 x0) 3)", "(sub 1 (mul x0 x0))", 1),
    "inverse_cube": ("(pow (add 2 x0) -3)", "(mul 3 x0)", 1),
    "bump": ("(add 1 (mul x0 x0))", "x0", 1),
    "gaussian2": ("(exp (neg (div (add (mul x0 x0) (mul x1 x1)) 2)))", "(add x0 x1)", 2),
}

# Members whose log is not concave; kept as the negative control for the sign audit
NON_LOG_CONCAVE: List[str] = ["bump", "inverse_cube"]

# Sphere solver roster: name -> (v, base w0); "soliton" marks the v-soliton weight of v
SPHERE_ROSTER: Dict[str, Tuple[str, str]] = {
    "round": ("1", "0"),
    "exponential": ("(exp x0)", "soliton"),
    "gaussian": ("(exp (neg (mul x0 x0)))", "0"),
    "affine": ("(div (add 2 x0) 3)", "0"),
    "inverse_cube": ("(pow (add 2 x0) -3)", "(mul 2 x0)"),
}


def get_check_anchor(check_id: str) -> Optional[str]:
    """Get the anchor text of an identity or inequality check"""
    if check_id in IDENTITY_CHECKS:
        return IDENTITY_CHECKS[check_id][0]
    return INEQUALITY_CHECKS.get(check_id)


def get_check_tolerance(check_id: str) -> float:
    """Get the pass tolerance of an identity check"""
    if check_id not in IDENTITY_CHECKS:
        raise ValueError(f"Unknown identity check: {check_id}")
    return IDENTITY_CHECKS[check_id][1]


def relative_residual(a, b):
    """|a - b| / (1 + max(|a|, |b|)), elementwise"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / (1.0 + np.maximum(np.abs(a), np.abs(b)))
