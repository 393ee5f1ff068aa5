"""
Sphere solver module for the weighted cscK lab
S¹-invariant weighted cscK metrics on the unit-area sphere: exact quadrature
oracle, damped Newton collocation on the coupled (φ, F) system, reconstruction
into chart states and the entropy / trace estimates of a solution
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Chebyshev
from numpy.polynomial import chebyshev as cheb
from scipy.linalg import lstsq
from scipy.optimize import brentq

try:
    from wcsk.taylor import Jet, JetDomainError, get_basis
    from wcsk.weights import (
        Const, Polytope, WeightDomainError, WeightExpr, WeightPair, add, affine, eval_weight, evaluate_jet, mul,
        parse_weight, soliton_weight,
    )
    from wcsk.chart import PotentialJet, metric_state, sphere_chart
    from wcsk.weighted_ops import WeightedContext, build_context, scal_v, weighted_laplacian
    from wcsk.utils import (
        ARMIJO_SLOPE, CONVERGENCE_FACTOR, CONVERGENCE_FLOOR, HOMOTOPY_TOLERANCE, JET_ORDER,
        MAX_HOMOTOPY_STAGES, MIN_HOMOTOPY_STEP, SPHERE_ROSTER, SPHERE_SCALE,
    )
except ImportError:
    # For direct execution
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent.parent))
    from wcsk.taylor import Jet, JetDomainError, get_basis
    from wcsk.weights import (
        Const, Polytope, WeightDomainError, WeightExpr, WeightPair, add, affine, eval_weight, evaluate_jet, mul,
        parse_weight, soliton_weight,
    )
    from wcsk.chart import PotentialJet, metric_state, sphere_chart
    from wcsk.weighted_ops import WeightedContext, build_context, scal_v, weighted_laplacian
    from wcsk.utils import (
        ARMIJO_SLOPE, CONVERGENCE_FACTOR, CONVERGENCE_FLOOR, HOMOTOPY_TOLERANCE, JET_ORDER,
        MAX_HOMOTOPY_STAGES, MIN_HOMOTOPY_STEP, SPHERE_ROSTER, SPHERE_SCALE,
    )

logger = logging.getLogger(__name__)

S = SPHERE_SCALE
# Ric(ω₀) = A₀ ω₀ for the unit-area round metric
ROUND_RICCI_BOUND = 4.0 * math.pi
ONE_MINUS_SQUARE = np.array([0.5, 0.0, -0.5])
INTERVAL = Polytope.interval(-1.0, 1.0)
# Relative size below which trailing Chebyshev coefficients of a solved profile are rounding noise
PROFILE_CHOP = 1e-13


class NonpositiveProfileError(ValueError):
    """The weights admit no positive momentum profile"""


class SolverError(RuntimeError):
    """Newton iteration failed; carries the iteration trace"""

    def __init__(self, message: str, trace: Sequence["IterationRecord"] = ()):
        super().__init__(message)
        self.trace = list(trace)


# ---------------------------------------------------------------------------
# Chebyshev collocation
# ---------------------------------------------------------------------------

def lobatto_nodes(count: int) -> np.ndarray:
    """Chebyshev–Lobatto nodes on [-1, 1], ascending"""
    return -np.cos(np.pi * np.arange(count) / (count - 1))


def differentiation_matrix(nodes: np.ndarray) -> np.ndarray:
    """Spectral differentiation matrix on Chebyshev–Lobatto nodes"""
    m = len(nodes) - 1
    c = np.ones(m + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(m + 1)
    diff = nodes[:, None] - nodes[None, :]
    D = np.outer(c, 1.0 / c) / (diff + np.eye(m + 1))
    return D - np.diag(D.sum(axis=1))


def clenshaw_curtis_weights(count: int) -> np.ndarray:
    m = count - 1
    theta = np.pi * np.arange(m + 1) / m
    weights = np.zeros(m + 1)
    inner = np.arange(1, m)
    v = np.ones(m - 1)
    if m % 2 == 0:
        weights[0] = weights[m] = 1.0 / (m * m - 1)
        for k in range(1, m // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
        v -= np.cos(m * theta[inner]) / (m * m - 1)
    else:
        weights[0] = weights[m] = 1.0 / (m * m)
        for k in range(1, (m - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
    weights[inner] = 2.0 * v / m
    return weights


def interpolant(nodes: np.ndarray, values: np.ndarray) -> Chebyshev:
    return Chebyshev.fit(nodes, values, deg=len(nodes) - 1, domain=[-1.0, 1.0])


def _divide_one_minus_square(series: Chebyshev) -> Chebyshev:
    quotient, _ = cheb.chebdiv(series.coef, ONE_MINUS_SQUARE)
    return Chebyshev(quotient)


def evaluation_row(nodes: np.ndarray, point: float) -> np.ndarray:
    """Row ℓ with ℓ·f = p(point) for the interpolant p of f on Chebyshev–Lobatto nodes"""
    diff = point - nodes
    row = np.zeros_like(nodes)
    hit = np.flatnonzero(np.abs(diff) < 1e-14)
    if hit.size:
        row[hit[0]] = 1.0
        return row
    bary = (-1.0) ** np.arange(len(nodes))
    bary[0] *= 0.5
    bary[-1] *= 0.5
    row = bary / diff
    return row / row.sum()


def invert_monotone(fn, values: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Solve fn(s) = value for each value with an increasing fn on [lo, hi]"""
    f_lo, f_hi = float(fn(lo)), float(fn(hi))
    out = np.empty(len(values))
    for j, value in enumerate(np.asarray(values, dtype=float)):
        if value <= f_lo:
            out[j] = lo
        elif value >= f_hi:
            out[j] = hi
        else:
            out[j] = brentq(lambda s: float(fn(s)) - value, lo, hi, xtol=1e-15)
    return out


@dataclass(frozen=True)
class Collocation:
    nodes: np.ndarray
    D: np.ndarray
    weights: np.ndarray
    # Evaluation at y = 0, where the moment gauge x(0) = 0 is imposed
    center: np.ndarray

    @property
    def theta0(self) -> np.ndarray:
        return 1.0 - self.nodes ** 2

    @classmethod
    def build(cls, count: int) -> "Collocation":
        nodes = lobatto_nodes(count)
        return cls(
            nodes=nodes,
            D=differentiation_matrix(nodes),
            weights=clenshaw_curtis_weights(count),
            center=evaluation_row(nodes, 0.0),
        )


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SphereProfile:
    """Momentum profile θ on the normalized interval, θ(±1) = 0, θ'(±1) = ∓2"""

    series: Chebyshev

    @classmethod
    def round(cls) -> "SphereProfile":
        return cls(Chebyshev(ONE_MINUS_SQUARE.copy()))

    def __call__(self, x):
        return self.series(x)

    def derivatives(self, x: np.ndarray, count: int = 4) -> List[np.ndarray]:
        out = [self.series(x)]
        d = self.series
        for _ in range(1, count):
            d = d.deriv()
            out.append(d(x))
        return out

    def boundary_defect(self) -> float:
        slope = self.series.deriv()
        return float(max(
            abs(self.series(-1.0)), abs(self.series(1.0)),
            abs(slope(-1.0) - 2.0), abs(slope(1.0) + 2.0),
        ))

    def minimum_interior(self, samples: int = 2001) -> float:
        x = np.cos(np.pi * (np.arange(samples) + 0.5) / samples)
        return float(np.min(self.series(x) / (1.0 - x * x)))

    def reflected(self) -> "SphereProfile":
        coef = self.series.coef * (-1.0) ** np.arange(len(self.series.coef))
        return SphereProfile(Chebyshev(coef))

    def remainder(self) -> Chebyshev:
        """
        r = 1/θ − 1/(1 − x²), smooth on the closed interval.

        With θ = (1 − x²)g and g(±1) = 1, r = q/g for q = (1 − g)/(1 − x²),
        both polynomial quotients.
        """
        deg = max(len(self.series.coef) - 1, 64)
        g = _divide_one_minus_square(self.series)
        q = _divide_one_minus_square(Chebyshev([1.0]) - g)
        return Chebyshev.interpolate(lambda x: q(x) / g(x), deg)

    def scal_v(self, pair: WeightPair, x: np.ndarray) -> np.ndarray:
        """Scal_v = −s (vθ)'' in momentum coordinates"""
        v = eval_weight(pair.v, x[:, None], order=2)
        d = self.derivatives(x, 3)
        vpp = v.hessian[:, 0, 0]
        vp = v.gradient[:, 0]
        return -S * (v.value * d[2] + 2.0 * vp * d[1] + vpp * d[0])


# ---------------------------------------------------------------------------
# Weights on the interval
# ---------------------------------------------------------------------------

class IntervalWeights(NamedTuple):
    v: np.ndarray
    v_x: np.ndarray
    v_xx: np.ndarray
    w: np.ndarray
    w_x: np.ndarray

    @property
    def l1(self) -> np.ndarray:
        return self.v_x / self.v

    @property
    def l1_prime(self) -> np.ndarray:
        return self.v_xx / self.v - self.l1 ** 2


def interval_weights(pair: WeightPair, x: np.ndarray) -> IntervalWeights:
    points = np.asarray(x, dtype=float)[:, None]
    v = eval_weight(pair.v, points, order=2, polytope=INTERVAL)
    w = eval_weight(pair.w, points, order=1)
    if np.any(v.value <= 0):
        raise WeightDomainError("nonpositive weight on the momentum interval")
    return IntervalWeights(v.value, v.gradient[:, 0], v.hessian[:, 0, 0], w.value, w.gradient[:, 0])


def get_sphere_pair(name: str) -> WeightPair:
    """Weights of a sphere roster member on [-1, 1], with its base w₀"""
    if name not in SPHERE_ROSTER:
        raise ValueError(f"Unknown sphere roster member: {name}")
    v_text, w_text = SPHERE_ROSTER[name]
    v = parse_weight(v_text)
    w0 = soliton_weight(v, 1, 1) if w_text == "soliton" else parse_weight(w_text)
    return WeightPair(v, w0, INTERVAL, name=name)


# ---------------------------------------------------------------------------
# Quadrature oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadratureSolution:
    profile: SphereProfile
    pair: WeightPair
    a: float
    b: float


def solve_quadrature(pair: WeightPair, count: int = 129) -> QuadratureSolution:
    """
    Integrate −s(vθ)'' = w₀ + a + b·x twice with θ(±1) = 0, θ'(±1) = ∓2.

    Args:
        pair: Weights on [-1, 1]; pair.w is the base w₀
        count: Degree + 1 of the Chebyshev representations

    Returns:
        QuadratureSolution with the adjusted pair w = w₀ + a + b·x

    Raises:
        NonpositiveProfileError: θ fails positivity in the interior
    """
    deg = count - 1
    v = Chebyshev.interpolate(lambda x: eval_weight(pair.v, x[:, None], order=0).value, deg)
    w0 = Chebyshev.interpolate(lambda x: eval_weight(pair.w, x[:, None], order=0).value, deg)
    v_left, v_right = float(v(-1.0)), float(v(1.0))

    mass = float(w0.integ(lbnd=-1.0)(1.0))
    moment = float((w0 * Chebyshev([0.0, 1.0])).integ(lbnd=-1.0)(1.0))
    a = 0.5 * (2.0 * S * (v_right + v_left) - mass)
    b = 1.5 * (2.0 * S * (v_right - v_left) - moment)
    w = w0 + Chebyshev([a, b])

    U = Chebyshev([2.0 * v_left, 2.0 * v_left]) - w.integ(2, lbnd=-1.0) / S
    profile = SphereProfile(Chebyshev.interpolate(lambda x: U(x) / v(x), deg))
    lowest = profile.minimum_interior()
    if lowest <= 0:
        raise NonpositiveProfileError(f"profile for '{pair.name}' is nonpositive (min θ/(1−x²) = {lowest:.3g})")

    adjusted = pair.with_w(add(pair.w, affine([a, b])))
    logger.info("Quadrature profile for '%s': a = %.12g, b = %.12g", pair.name, a, b)
    return QuadratureSolution(profile=profile, pair=adjusted, a=a, b=b)


# ---------------------------------------------------------------------------
# Newton collocation
# ---------------------------------------------------------------------------

class IterationRecord(NamedTuple):
    iteration: int
    residual: float
    step: float
    backtracks: int
    homotopy: float = 1.0


class SystemEval(NamedTuple):
    R1: np.ndarray
    R2: np.ndarray
    gauge: float
    center: float
    x: np.ndarray
    h: np.ndarray
    weights: IntervalWeights

    @property
    def merit(self) -> float:
        return float(max(np.max(np.abs(self.R1)), np.max(np.abs(self.R2)), abs(self.gauge), abs(self.center)))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.R1, self.R2, [self.gauge, self.center]])


def _evaluate_system(
    colloc: Collocation, pair: WeightPair, phi: np.ndarray, F: np.ndarray, shift: Sequence[float] = (0.0, 0.0)
) -> Optional[SystemEval]:
    """
    Residuals of the collocated system for w + shift[0] + shift[1]·x.

    The shift is the grid's own compatibility correction: two unknowns
    that close the system and vanish with the discretization error.
    """
    y, D, theta0 = colloc.nodes, colloc.D, colloc.theta0
    q = theta0 * (D @ phi)
    x = y + S * q
    h = 1.0 + S * (D @ q)
    if np.any(h <= 0) or np.any(np.abs(x) > 1.0 + 1e-12):
        return None
    center = float(colloc.center @ x)
    x = np.clip(x, -1.0, 1.0)
    try:
        wts = interval_weights(pair, x)
    except (WeightDomainError, JetDomainError):
        return None
    wts = wts._replace(w=wts.w + shift[0] + shift[1] * x, w_x=wts.w_x + shift[1])

    dF = D @ F
    R1 = F - np.log(wts.v) - np.log(h)
    R2 = (
        S * (D @ (theta0 * dF)) / h
        + S * wts.l1 * theta0 * dF
        + wts.w / wts.v
        - 2.0 * (S / h + S * wts.l1 * y)
    )
    return SystemEval(R1=R1, R2=R2, gauge=float(colloc.weights @ phi), center=center, x=x, h=h, weights=wts)


def _jacobian(colloc: Collocation, ev: SystemEval, F: np.ndarray) -> np.ndarray:
    """
    Square Jacobian in (φ, F, shift): both residual blocks, then the mean-φ
    and x(0) = 0 gauge rows.
    """
    y, D, theta0 = colloc.nodes, colloc.D, colloc.theta0
    n = len(y)
    wts, h = ev.weights, ev.h
    Q = theta0[:, None] * D
    dx = S * Q
    dh = S * (D @ Q)
    dF = D @ F
    A = S * (D @ (theta0 * dF)) / h
    ratio_slope = wts.w_x / wts.v - wts.w * wts.v_x / wts.v ** 2

    r1_phi = -wts.l1[:, None] * dx - (1.0 / h)[:, None] * dh
    r1_F = np.eye(n)
    r2_phi = (
        -(A / h)[:, None] * dh
        + (S * theta0 * dF * wts.l1_prime)[:, None] * dx
        + ratio_slope[:, None] * dx
        + (2.0 * S / h ** 2)[:, None] * dh
        - (2.0 * S * y * wts.l1_prime)[:, None] * dx
    )
    r2_F = (S / h)[:, None] * (D @ (theta0[:, None] * D)) + (S * wts.l1 * theta0)[:, None] * D

    jac = np.zeros((2 * n + 2, 2 * n + 2))
    jac[:n, :n] = r1_phi
    jac[:n, n:2 * n] = r1_F
    jac[n:2 * n, :n] = r2_phi
    jac[n:2 * n, n:2 * n] = r2_F
    jac[n:2 * n, 2 * n] = 1.0 / wts.v
    jac[n:2 * n, 2 * n + 1] = ev.x / wts.v
    jac[2 * n, :n] = colloc.weights
    jac[2 * n + 1, :n] = colloc.center @ dx
    return jac


def _seed_F(colloc: Collocation, pair: WeightPair, phi: np.ndarray) -> Optional[np.ndarray]:
    """F = log v(x) + log h, which zeroes the first residual for this φ"""
    q = colloc.theta0 * (colloc.D @ phi)
    h = 1.0 + S * (colloc.D @ q)
    if np.any(h <= 0):
        return None
    x = np.clip(colloc.nodes + S * q, -1.0, 1.0)
    try:
        return np.log(interval_weights(pair, x).v) + np.log(h)
    except (WeightDomainError, JetDomainError):
        return None


@dataclass(frozen=True, eq=False)
class GlobalSolution:
    pair: WeightPair
    colloc: Collocation
    phi: np.ndarray
    F: np.ndarray
    R1: float
    R2: float
    iterations: Tuple[IterationRecord, ...]
    converged: bool
    stalled: bool = False
    # Grid compatibility correction of w, a + b·x
    shift: Tuple[float, float] = (0.0, 0.0)

    @property
    def nodes(self) -> np.ndarray:
        return self.colloc.nodes

    @property
    def x(self) -> np.ndarray:
        return self.nodes + S * self.colloc.theta0 * (self.colloc.D @ self.phi)

    @property
    def h(self) -> np.ndarray:
        return 1.0 + S * (self.colloc.D @ (self.colloc.theta0 * (self.colloc.D @ self.phi)))

    @property
    def theta(self) -> np.ndarray:
        return self.colloc.theta0 * self.h

    @cached_property
    def profile(self) -> SphereProfile:
        """θ as a series in x, through the inverse of the moment map y ↦ x(y)"""
        y = self.nodes
        X = interpolant(y, np.clip(self.x, -1.0, 1.0))
        Theta = interpolant(y, self.theta)
        series = Chebyshev.interpolate(lambda s: Theta(invert_monotone(X, s)), len(y) - 1)
        # Rounding noise in the tail would dominate θ'' and θ''' near the poles
        return SphereProfile(series.trim(PROFILE_CHOP * float(np.max(np.abs(series.coef)))))

    @property
    def area(self) -> float:
        """∫ω_φ through the momentum pushforward ½ h dy"""
        return float(0.5 * self.colloc.weights @ self.h)

    @property
    def residual(self) -> float:
        return max(self.R1, self.R2)

    def to_frame(self) -> pd.DataFrame:
        x = self.x
        w = eval_weight(self.pair.w, x[:, None], order=0).value
        return pd.DataFrame({
            "x": x,
            "theta": self.theta,
            "phi": self.phi,
            "F": self.F,
            "mu": x / S,
            "Scal_v": self.profile.scal_v(self.pair, x),
            "w": w,
        })


def solution_from_profile(profile: SphereProfile, pair: WeightPair, count: int = 129) -> Tuple[np.ndarray, np.ndarray]:
    """
    Newton unknowns (φ, F) on the collocation grid for a given profile.

    The profile's moment x and the background moment y are linked through
    ρ = ∫dx/θ = atanh y, which gives x(y) by a monotone root solve.
    """
    colloc = Collocation.build(count)
    y = colloc.nodes
    R = profile.remainder().integ(lbnd=0.0)

    def background_moment(x):
        t = np.tanh(R(x))
        return (x + t) / (1.0 + x * t)

    x = invert_monotone(background_moment, y)
    x[0], x[-1] = -1.0, 1.0

    X = interpolant(y, x)
    phi_y = _divide_one_minus_square((X - Chebyshev([0.0, 1.0])) / S)
    phi = phi_y.integ()(y)
    phi = phi - (colloc.weights @ phi) / np.sum(colloc.weights)
    F = _seed_F(colloc, pair, phi)
    if F is None:
        raise NonpositiveProfileError(f"profile for '{pair.name}' gives a nonpositive volume density on {count} nodes")
    return phi, F


class NewtonStage(NamedTuple):
    phi: np.ndarray
    F: np.ndarray
    shift: np.ndarray
    ev: SystemEval
    records: List[IterationRecord]
    converged: bool
    stalled: bool


def _newton_stage(
    colloc: Collocation,
    pair: WeightPair,
    phi: np.ndarray,
    F: np.ndarray,
    tolerance: float,
    max_iterations: int,
    damping: float,
    max_backtracks: int,
    homotopy: float = 1.0,
    first: int = 0,
) -> NewtonStage:
    """
    Damped Newton steps on one pair until the sup residual reaches `tolerance`.

    Each step solves the linearized system with both gauge rows in the
    least-squares sense; it is kept when it passes the Armijo test on the
    2-norm of the full residual vector.
    """
    n = len(colloc.nodes)
    shift = np.zeros(2)
    ev = _evaluate_system(colloc, pair, phi, F)
    if ev is None:
        raise SolverError(f"initial state for '{pair.name}' is not admissible")

    records = [IterationRecord(first, ev.merit, 0.0, 0, homotopy)]
    converged = stalled = False
    for _ in range(max_iterations):
        if ev.merit <= tolerance:
            converged = True
            break
        residual = ev.vector
        norm = float(np.linalg.norm(residual))
        step = lstsq(_jacobian(colloc, ev, F), -residual, lapack_driver="gelsd")[0]

        length = 1.0
        accepted = None
        for backtrack in range(max_backtracks + 1):
            trial_phi = phi + length * step[:n]
            trial_F = F + length * step[n:2 * n]
            trial_shift = shift + length * step[2 * n:]
            trial = _evaluate_system(colloc, pair, trial_phi, trial_F, trial_shift)
            if trial is not None and np.linalg.norm(trial.vector) <= (1.0 - ARMIJO_SLOPE * length) * norm:
                accepted = (trial_phi, trial_F, trial_shift, trial, backtrack)
                break
            length *= damping

        if accepted is None:
            stalled = True
            logger.debug("Line search stalled for '%s' at residual %.3e", pair.name, ev.merit)
            break
        phi, F, shift, ev, backtracks = accepted
        records.append(IterationRecord(first + len(records), ev.merit, length, backtracks, homotopy))
        logger.debug("Newton %d for '%s': residual %.3e, step %.3g", records[-1].iteration, pair.name, ev.merit, length)
    else:
        converged = ev.merit <= tolerance
    return NewtonStage(phi, F, shift, ev, records, converged, stalled)


def homotopy_pair(pair: WeightPair, t: float) -> WeightPair:
    """
    v_t = (1 − t) + t·v and w_t = 2s(1 − t) + t·w.

    Both compatibility conditions are linear in (v, w) and the round pair
    meets them, so w_t stays compatible; the profile is positive because
    v_tθ_t = (1 − t)(1 − x²) + t·vθ.
    """
    if t >= 1.0:
        return pair
    v = add(Const(1.0 - t), mul(Const(t), pair.v))
    w = add(Const(2.0 * S * (1.0 - t)), mul(Const(t), pair.w))
    return WeightPair(v, w, pair.polytope, name=f"{pair.name}@{t:.4g}")


def solve_newton(
    pair: WeightPair,
    init: Optional[SphereProfile] = None,
    count: int = 129,
    tolerance: float = 1e-9,
    stall_tolerance: float = 1e-7,
    max_iterations: int = 50,
    damping: float = 0.5,
    max_backtracks: int = 30,
) -> GlobalSolution:
    """
    Damped Newton iteration on the collocated (φ, F) system.

    Without a starting profile the weights are reached by continuation from
    the round pair: the full pair is tried first, and a failed stage halves
    the step in t (doubling it again after a success). The constants of an
    affine correction a + b·x of w are solved with (φ, F) so that the
    collocated system is square; they shrink with the discretization error.

    Args:
        pair: Weights on [-1, 1] with w already compatible
        init: Starting profile; continuation from φ = 0 otherwise
        count: Number of Chebyshev–Lobatto nodes
        tolerance: Target sup residual
        stall_tolerance: Residual accepted when the line search stalls
        max_iterations: Newton steps per stage
        damping: Backtracking factor
        max_backtracks: Backtracks per step

    Returns:
        GlobalSolution normalized by sup φ = 0

    Raises:
        SolverError: No convergence, with the trace of every stage tried
    """
    colloc = Collocation.build(count)
    n = len(colloc.nodes)
    newton = dict(max_iterations=max_iterations, damping=damping, max_backtracks=max_backtracks)
    trace: List[IterationRecord] = []

    if init is not None:
        phi, F = solution_from_profile(init, pair, count)
        stage = _newton_stage(colloc, pair, phi, F, tolerance, **newton)
        trace = stage.records
        if stage.ev.merit > stall_tolerance:
            raise SolverError(
                f"Newton failed for '{pair.name}': residual {stage.ev.merit:.3e} after {len(trace) - 1} iterations",
                trace,
            )
    else:
        phi, t, dt = np.zeros(n), 0.0, 1.0
        stage = None
        for _ in range(MAX_HOMOTOPY_STAGES):
            target = min(1.0, t + dt)
            final = target >= 1.0
            stage_pair = homotopy_pair(pair, target)
            accept = stall_tolerance if final else HOMOTOPY_TOLERANCE
            attempt = None
            F_seed = _seed_F(colloc, stage_pair, phi)
            if F_seed is not None:
                try:
                    attempt = _newton_stage(
                        colloc, stage_pair, phi, F_seed, tolerance if final else HOMOTOPY_TOLERANCE,
                        homotopy=target, first=len(trace), **newton,
                    )
                    trace.extend(attempt.records)
                except SolverError as e:
                    logger.debug("%s", e)

            if attempt is not None and attempt.ev.merit <= accept:
                phi, t = attempt.phi, target
                if final:
                    stage = attempt
                    break
                dt *= 2.0
                logger.debug("Continuation for '%s' reached t = %.4g", pair.name, t)
                continue

            dt *= 0.5
            if dt < MIN_HOMOTOPY_STEP:
                raise SolverError(
                    f"Newton failed for '{pair.name}': continuation stuck at t = {t:.4g} "
                    f"(step below {MIN_HOMOTOPY_STEP:.3g})",
                    trace,
                )
        if stage is None:
            raise SolverError(
                f"Newton failed for '{pair.name}': continuation at t = {t:.4g} after {MAX_HOMOTOPY_STAGES} stages",
                trace,
            )

    if not stage.converged:
        logger.warning(
            "Accepting '%s' at residual %.3e above tolerance %.1e (%s)",
            pair.name, stage.ev.merit, tolerance, "line search stalled" if stage.stalled else "iteration cap",
        )

    return GlobalSolution(
        pair=pair,
        colloc=colloc,
        phi=stage.phi - np.max(stage.phi),
        F=stage.F,
        R1=float(np.max(np.abs(stage.ev.R1))),
        R2=float(np.max(np.abs(stage.ev.R2))),
        iterations=tuple(trace),
        converged=stage.converged,
        stalled=stage.stalled,
        shift=(float(stage.shift[0]), float(stage.shift[1])),
    )


def compare_with_oracle(solution: GlobalSolution, oracle: SphereProfile) -> float:
    """sup |θ_newton − θ_oracle| on the solution's moment nodes"""
    return float(np.max(np.abs(solution.theta - oracle(solution.x))))


# ---------------------------------------------------------------------------
# Reconstruction into chart states
# ---------------------------------------------------------------------------

class ReconstructedBatch(NamedTuple):
    x: np.ndarray
    reflected: bool
    ctx: WeightedContext

    def normalized_moment(self) -> np.ndarray:
        x = S * self.ctx.state.mu.value[..., 0]
        return -x if self.reflected else x

    def moment_jet(self) -> Jet:
        """Normalized moment of ω_φ as a jet in the batch's chart"""
        x = self.ctx.state.mu[..., 0] * S
        return -x if self.reflected else x


def reflect_pair(pair: WeightPair) -> WeightPair:
    return pair.pullback(np.array([[-1.0]]), np.array([0.0]), INTERVAL)


def _potential_coefficients(profile: SphereProfile, x: np.ndarray, order: int, offset: float) -> List[np.ndarray]:
    """Value and ρ-derivatives of the radial potential u at the moment values x"""
    r = profile.remainder()
    S_int = (r * Chebyshev([1.0, 1.0])).integ(lbnd=0.0)
    t, t1, t2, t3 = profile.derivatives(x, 4)
    coeffs = [
        math.log(2.0) / (4.0 * math.pi) + (-np.log1p(-x) + S_int(x)) / S + offset,
        x / S + 1.0 / (4.0 * math.pi),
        t / S,
        t1 * t / S,
        (t2 * t + t1 * t1) * t / S,
        t * (t3 * t * t + 4.0 * t * t1 * t2 + t1 ** 3) / S,
    ]
    return coeffs[: order + 1]


def _chart_batch(
    profile: SphereProfile, pair: WeightPair, x: np.ndarray, order: int, reflected: bool, offset: float
) -> ReconstructedBatch:
    spec = sphere_chart()
    prof = profile.reflected() if reflected else profile
    local_pair = reflect_pair(pair) if reflected else pair
    xs = -x if reflected else x

    rho = np.arctanh(xs) + prof.remainder().integ(lbnd=0.0)(xs)
    coeffs = _potential_coefficients(prof, xs, order, offset)
    points = np.exp(rho)[:, None] * np.array([math.cos(0.3), math.sin(0.3)])

    basis = get_basis(2, order)
    coords = Jet.variables(points, basis)
    delta = (coords[0] * coords[0] + coords[1] * coords[1]).log() * 0.5 - rho
    u = Jet.constant(coeffs[order] / math.factorial(order), basis)
    for k in range(order - 1, -1, -1):
        u = u * delta + coeffs[k] / math.factorial(k)

    background = evaluate_jet(spec.potential, coords)
    jet = PotentialJet(spec=spec, point=points, coordinates=tuple(coords), background=background, perturbation=u - background)
    ctx = build_context(metric_state(jet), spec.physical_pair(local_pair))
    return ReconstructedBatch(x=x, reflected=reflected, ctx=ctx)


def reconstruct_states(
    profile: SphereProfile,
    pair: WeightPair,
    x: Optional[np.ndarray] = None,
    order: int = JET_ORDER,
    offset: float = 0.0,
) -> List[ReconstructedBatch]:
    """
    Weighted contexts of the metric with momentum profile θ.

    Points with x ≤ 0 use the chart around the south pole, the rest the
    chart w = 1/z where the moment and the weights are reflected.

    Args:
        profile: Momentum profile
        pair: Weights on [-1, 1]
        x: Moment values in (-1, 1); Gauss–Legendre nodes by default
        order: Jet order
        offset: Additive constant of φ

    Returns:
        One ReconstructedBatch per chart used
    """
    if x is None:
        x = np.polynomial.legendre.leggauss(64)[0]
    x = np.asarray(x, dtype=float)
    batches = []
    for reflected, mask in ((False, x <= 0.0), (True, x > 0.0)):
        if np.any(mask):
            batches.append(_chart_batch(profile, pair, x[mask], order, reflected, offset))
    return batches


class SelfAdjointness(NamedTuple):
    forward: float
    backward: float
    residual: float


def weighted_self_adjointness(
    profile: SphereProfile, pair: WeightPair, f: WeightExpr, h: WeightExpr, nodes: int = 64
) -> SelfAdjointness:
    """
    ∫ f Δ_{φ,v}h v ω_φ against ∫ h Δ_{φ,v}f v ω_φ for invariant f(x), h(x).

    Integrals use the uniform pushforward ½dx of ω_φ and Gauss–Legendre nodes.
    """
    x, weights = np.polynomial.legendre.leggauss(nodes)
    forward = backward = 0.0
    scale = 0.0
    for batch in reconstruct_states(profile, pair, x, order=JET_ORDER):
        moment = batch.moment_jet()
        f_jet = evaluate_jet(f, [moment])
        h_jet = evaluate_jet(h, [moment])
        ctx = batch.ctx
        wts = weights[np.isin(x, batch.x)]
        forward += 0.5 * float(np.sum(wts * f_jet.value * weighted_laplacian(h_jet, ctx) * ctx.v))
        backward += 0.5 * float(np.sum(wts * h_jet.value * weighted_laplacian(f_jet, ctx) * ctx.v))
        scale = max(scale, float(np.max(np.abs(f_jet.value))) * float(np.max(np.abs(h_jet.value))))
    return SelfAdjointness(forward, backward, abs(forward - backward) / max(scale, 1e-300))


def reconstructed_residual(solution: GlobalSolution, x: Optional[np.ndarray] = None) -> float:
    """sup |Scal_v − w(μ_φ)| through the definitional Scal_v on chart states"""
    worst = 0.0
    for batch in reconstruct_states(solution.profile, solution.pair, x):
        ctx = batch.ctx
        worst = max(worst, float(np.max(np.abs(scal_v(ctx, "definition") - ctx.w))))
    return worst


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------

class DensitySolution(NamedTuple):
    psi: np.ndarray
    residual: float


def solve_prescribed_density(colloc: Collocation, density: np.ndarray) -> DensitySolution:
    """
    Solve 1 + s(θ₀ψ_y)_y = density on the collocation grid, sup ψ = 0.

    The density must have total mass one for ½dy; then θ₀ψ_y vanishes at both
    ends and ψ_y is a polynomial quotient by (1 − y²).
    """
    y = colloc.nodes
    excess = interpolant(y, density - 1.0)
    flux = excess.integ(lbnd=-1.0) / S
    psi = _divide_one_minus_square(flux).integ()(y)
    psi = psi - np.max(psi)
    residual = 1.0 + S * (colloc.D @ (colloc.theta0 * (colloc.D @ psi))) - density
    return DensitySolution(psi=psi, residual=float(np.max(np.abs(residual))))


def solve_auxiliary_psi(solution: GlobalSolution) -> DensitySolution:
    """ψ with ω_ψ = b⁻¹√(F² + 1) ω_φ, normalized by sup ψ = 0"""
    F, h = solution.F, solution.h
    b = float(0.5 * solution.colloc.weights @ (np.sqrt(F * F + 1.0) * h))
    return solve_prescribed_density(solution.colloc, np.sqrt(F * F + 1.0) * h / b)


@dataclass(frozen=True)
class EstimateReport:
    entropy: float
    weighted_entropy: float
    m_v: float
    b: float
    sup_F: float
    inf_F: float
    sup_trace: float
    lp_norms: Dict[int, float]
    sup_gradient: float
    sup_gradient_plus_trace: float
    psi_residual: float
    psi_area: float
    epsilon: float
    A: float
    sup_combination: float
    b_bound: float
    entropy_bound: float
    eta: float
    L: float
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


class DensityQuantities(NamedTuple):
    entropy: float
    weighted_entropy: float
    m_v: float
    b: float


def _entropies(colloc: Collocation, h: np.ndarray, F: np.ndarray) -> DensityQuantities:
    half = 0.5 * colloc.weights
    m_v = float(half @ np.exp(F))
    return DensityQuantities(
        entropy=float(half @ (h * np.log(h))),
        weighted_entropy=float(half @ (np.exp(F) * F)) / m_v - math.log(m_v),
        m_v=m_v,
        b=float(half @ (np.sqrt(F * F + 1.0) * h)),
    )


def entropy_comparison_bound(entropy: float, m_v: float, L: float) -> float:
    """(L log L)/m_v + (L/m_v)Ent + (L/m_v)e^{-1} − log m_v with L replaced by max(L, 1)"""
    L_eff = max(L, 1.0)
    return (L_eff * math.log(L_eff)) / m_v + (L_eff / m_v) * entropy + (L_eff / m_v) * math.exp(-1.0) - math.log(m_v)


def compute_estimates(
    solution: GlobalSolution,
    epsilon: float = 0.5,
    A: Optional[float] = None,
    p_values: Sequence[int] = (1, 2, 4, 8),
) -> EstimateReport:
    """
    Entropy, trace and gradient quantities of a solution.

    Args:
        solution: GlobalSolution
        epsilon: Weight of ψ in sup(F + εψ − Aφ)
        A: Weight of φ; 2A₀ + 1 with A₀ = 4π by default
        p_values: Exponents of the L^p norms of Λ₀(ω_φ)

    Returns:
        EstimateReport with its hard checks filled in
    """
    colloc = solution.colloc
    A = 2.0 * ROUND_RICCI_BOUND + 1.0 if A is None else A
    bounds = solution.pair.certify().bounds
    h, F = solution.h, solution.F
    quantities = _entropies(colloc, h, F)
    half = 0.5 * colloc.weights

    grad = S * colloc.theta0 * (colloc.D @ F) ** 2 / h
    aux = solve_auxiliary_psi(solution)

    b_bound = math.sqrt(2.0) / bounds.eta * (math.e + quantities.weighted_entropy)
    entropy_bound = entropy_comparison_bound(quantities.entropy, quantities.m_v, bounds.L)
    report = EstimateReport(
        entropy=quantities.entropy,
        weighted_entropy=quantities.weighted_entropy,
        m_v=quantities.m_v,
        b=quantities.b,
        sup_F=float(np.max(F)),
        inf_F=float(np.min(F)),
        sup_trace=float(np.max(h)),
        lp_norms={int(p): float((half @ h ** p) ** (1.0 / p)) for p in p_values},
        sup_gradient=float(np.max(grad)),
        sup_gradient_plus_trace=float(np.max(grad + h)),
        psi_residual=aux.residual,
        psi_area=float(half @ (1.0 + S * (colloc.D @ (colloc.theta0 * (colloc.D @ aux.psi))))),
        epsilon=epsilon,
        A=A,
        sup_combination=float(np.max(F + epsilon * aux.psi - A * solution.phi)),
        b_bound=b_bound,
        entropy_bound=entropy_bound,
        eta=bounds.eta,
        L=bounds.L,
        checks={
            "jensen": quantities.weighted_entropy >= -1e-12,
            "b_bound": quantities.b <= b_bound,
            "entropy_comparison": quantities.weighted_entropy <= entropy_bound + 1e-12,
            "psi_equation": aux.residual <= 1e-8,
        },
    )
    logger.info("Estimates for '%s': Ent = %.6g, Ent_v = %.6g, b = %.6g", solution.pair.name,
                report.entropy, report.weighted_entropy, report.b)
    return report


def entropy_family(pair: WeightPair, members: int = 20, count: int = 65, peak: float = 0.6, width: float = 0.08) -> pd.DataFrame:
    """
    Potentials with volume densities h_t = (1 − t) + t·k, k a normalized bump,
    pushed toward large entropy as t → 1.
    """
    colloc = Collocation.build(count)
    y = colloc.nodes
    half = 0.5 * colloc.weights
    bump = np.exp(-0.5 * ((y - peak) / width) ** 2) + 1e-3
    bump = bump / (half @ bump)
    L = pair.certify().bounds.L

    rows = []
    for t in np.linspace(0.0, 0.95, members):
        h = (1.0 - t) + t * bump
        phi = solve_prescribed_density(colloc, h).psi
        x = np.clip(y + S * colloc.theta0 * (colloc.D @ phi), -1.0, 1.0)
        F = np.log(interval_weights(pair, x).v) + np.log(h)
        q = _entropies(colloc, h, F)
        bound = entropy_comparison_bound(q.entropy, q.m_v, L)
        rows.append({
            "t": float(t),
            "Ent": q.entropy,
            "Ent_v": q.weighted_entropy,
            "m_v": q.m_v,
            "b": q.b,
            "sup_F": float(np.max(F)),
            "inf_F": float(np.min(F)),
            "comparison_bound": bound,
            "comparison_holds": bool(q.weighted_entropy <= bound + 1e-12),
            "ratio": (q.weighted_entropy + 1.0) / (q.entropy + 1.0),
        })
    return pd.DataFrame(rows)


def duistermaat_heckman_distance(solution: GlobalSolution, bins: int = 16) -> float:
    """χ² distance of the pushforward of ω_φ under the moment map from the uniform law"""
    y = solution.nodes
    X = interpolant(y, solution.x)
    H = interpolant(y, solution.h).integ(lbnd=-1.0)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    preimage = np.concatenate([[-1.0], invert_monotone(X, edges[1:-1]), [1.0]])
    masses = 0.5 * np.diff(H(preimage))
    expected = 1.0 / bins
    return float(np.sum((masses - expected) ** 2 / expected))


def grid_convergence(pair: WeightPair, counts: Sequence[int] = (17, 33, 65), **solver_kwargs) -> pd.DataFrame:
    """Residual, oracle distance and L^p norms as the grid is refined"""
    oracle = solve_quadrature(pair, count=max(counts) * 2 + 1)
    rows = []
    previous = None
    for count in counts:
        solution = solve_newton(oracle.pair, count=count, **solver_kwargs)
        residual = reconstructed_residual(solution)
        half = 0.5 * solution.colloc.weights
        row = {
            "N": count,
            "iterations": len(solution.iterations) - 1,
            "residual": residual,
            "oracle_distance": compare_with_oracle(solution, oracle.profile),
            "reduction": (previous / residual) if previous and residual > 0 else float("nan"),
        }
        for p in (1, 2, 4, 8):
            row[f"L{p}"] = float((half @ solution.h ** p) ** (1.0 / p))
        rows.append(row)
        previous = residual
    return pd.DataFrame(rows)


def grid_convergence_holds(
    table: pd.DataFrame, factor: float = CONVERGENCE_FACTOR, floor: float = CONVERGENCE_FLOOR
) -> bool:
    """
    Each refinement divides the reconstructed residual by at least `factor`,
    unless the finer residual is already below `floor`.
    """
    residual = table["residual"].to_numpy()
    if len(residual) < 2 or not np.all(np.isfinite(residual)):
        return False
    coarse, fine = residual[:-1], residual[1:]
    return bool(np.all((fine * factor <= coarse) | (fine <= floor)))
