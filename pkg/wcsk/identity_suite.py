"""
Identity suite module for the weighted cscK lab
Randomized invariant potentials, the identity battery and the inequality
audits, reduced into a deterministic AuditReport
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import unitary_group

try:
    from wcsk import taylor
    from wcsk.weights import (
        ZERO, Const, Polytope, WeightExpr, WeightPair, classical_pair, evaluate_jet,
        is_log_concave, parse_weight, polynomial,
    )
    from wcsk.chart import (
        ChartSpec, DegenerateMetricError, FormField, MetricState, MomentMapDomainError,
        covariant_hessian, covector_inner, curvature_bounds, dc, ddc_matrix, diff_trace_check,
        exterior_derivative_residual, get_chart, laplacian, metric_from_form,
        nabla0_omega_norm, nabla0_omega_norm_coordinates, relative_eigenvalues, state_at, trace,
    )
    from wcsk.weighted_ops import (
        build_context, compute_F, compute_F_jet, gradient_pairing,
        log_v_hessian_pairing, ricci0_moment, scal, scal_v, second_order_symbol,
        system_residual, weight_laplacians, weighted_laplacian, weighted_ricci_jet, weighted_trace,
    )
    from wcsk.sphere_solver import (
        NonpositiveProfileError, SphereProfile, solve_quadrature, weighted_self_adjointness,
    )
    from wcsk.utils import (
        DEFAULT_AMPLITUDES, DEFAULT_WEIGHT_ROSTER, EXTENDED_JET_ORDER, IDENTITY_CHECKS,
        INEQUALITY_CHECKS, INEQUALITY_SLACK, JET_ORDER, MAX_TRIES, NON_LOG_CONCAVE,
        POINT_CHUNK, POSITIVITY_MARGIN, get_check_anchor, get_check_tolerance, relative_residual,
    )
except ImportError:
    # For direct execution
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent.parent))
    from wcsk import taylor
    from wcsk.weights import (
        ZERO, Const, Polytope, WeightExpr, WeightPair, classical_pair, evaluate_jet,
        is_log_concave, parse_weight, polynomial,
    )
    from wcsk.chart import (
        ChartSpec, DegenerateMetricError, FormField, MetricState, MomentMapDomainError,
        covariant_hessian, covector_inner, curvature_bounds, dc, ddc_matrix, diff_trace_check,
        exterior_derivative_residual, get_chart, laplacian, metric_from_form,
        nabla0_omega_norm, nabla0_omega_norm_coordinates, relative_eigenvalues, state_at, trace,
    )
    from wcsk.weighted_ops import (
        build_context, compute_F, compute_F_jet, gradient_pairing,
        log_v_hessian_pairing, ricci0_moment, scal, scal_v, second_order_symbol,
        system_residual, weight_laplacians, weighted_laplacian, weighted_ricci_jet, weighted_trace,
    )
    from wcsk.sphere_solver import (
        NonpositiveProfileError, SphereProfile, solve_quadrature, weighted_self_adjointness,
    )
    from wcsk.utils import (
        DEFAULT_AMPLITUDES, DEFAULT_WEIGHT_ROSTER, EXTENDED_JET_ORDER, IDENTITY_CHECKS,
        INEQUALITY_CHECKS, INEQUALITY_SLACK, JET_ORDER, MAX_TRIES, NON_LOG_CONCAVE,
        POINT_CHUNK, POSITIVITY_MARGIN, get_check_anchor, get_check_tolerance, relative_residual,
    )

logger = logging.getLogger(__name__)

# Sign-term threshold a non-log-concave control has to exceed
CONTROL_VIOLATION = 1e-3
STABILITY_SLACK = 1e-6


class PotentialRejectedError(ValueError):
    """No admissible potential within the rejection budget"""

    def __init__(self, message: str, tries: int):
        super().__init__(message)
        self.tries = tries


def normalized_box(rank: int) -> Polytope:
    return Polytope.box([-1.0] * rank, [1.0] * rank)


def default_roster(names: Optional[Sequence[str]] = None) -> Tuple[WeightPair, ...]:
    """Certified weight pairs of the default roster, on [-1, 1]^rank"""
    pairs = []
    for name, (v, w, rank) in DEFAULT_WEIGHT_ROSTER.items():
        if names is not None and name not in names:
            continue
        pairs.append(WeightPair(parse_weight(v), parse_weight(w), normalized_box(rank), name=name).certify())
    return tuple(pairs)


@dataclass(frozen=True, eq=False)
class SamplePlan:
    """
    What to sample: chart family, potentials, points and weights.

    Identical plans give identical reports; every random draw is keyed by
    (seed, potential index, stream).
    """

    chart: str = "sphere"
    potentials: int = 4
    points: int = 50
    amplitudes: Tuple[float, ...] = DEFAULT_AMPLITUDES
    seed: int = 42
    roster: Tuple[WeightPair, ...] = field(default_factory=default_roster)
    delta: float = POSITIVITY_MARGIN
    max_tries: int = MAX_TRIES
    degree: int = 2
    K: float = 1.0
    # Sample blocks drawn so far, keyed by (potential, jet order, point count)
    blocks: Dict[Tuple[int, int, int], "SampleBlock"] = field(default_factory=dict, repr=False)

    @cached_property
    def spec(self) -> ChartSpec:
        return get_chart(self.chart)

    @cached_property
    def pairs(self) -> Tuple[WeightPair, ...]:
        fitting = tuple(p for p in self.roster if self.spec.fits(p))
        skipped = [p.name for p in self.roster if not self.spec.fits(p)]
        if skipped:
            logger.warning("Chart '%s' has torus rank %d; skipping %s", self.chart, self.spec.r, ", ".join(skipped))
        return fitting

    @cached_property
    def physical_pairs(self) -> Tuple[WeightPair, ...]:
        return tuple(self.spec.physical_pair(p) for p in self.pairs)


# ---------------------------------------------------------------------------
# Random potentials
# ---------------------------------------------------------------------------

class RandomPotential(NamedTuple):
    expr: WeightExpr
    coefficients: np.ndarray
    tries: int
    amplitude: float


def invariant_monomials(spec: ChartSpec, degree: int) -> List[WeightExpr]:
    """Products of the chart's invariant functions of total degree 1..degree"""
    monomials = []
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(spec.invariant_functions, d):
            term = combo[0]
            for factor in combo[1:]:
                term = term * factor
            monomials.append(term)
    return monomials


@lru_cache(maxsize=8)
def positivity_points(spec: ChartSpec) -> np.ndarray:
    """Radii from the origin to far out in every factor; unrotated factors also get three angles"""
    radii = np.concatenate([[0.0], np.geomspace(0.05, 10.0, 24)])
    factors = []
    for k in range(spec.n):
        angles = [0.0] if k < spec.r else [0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0]
        factors.append([(r * math.cos(a), r * math.sin(a)) for r in radii for a in angles])
    return np.array([sum(combo, ()) for combo in itertools.product(*factors)])


def random_potential(plan: SamplePlan, index: int) -> RandomPotential:
    """
    φ = (A/8π) Σ c_k m_k over invariant monomials with a unit random vector c.

    Args:
        plan: SamplePlan
        index: Potential index; the amplitude cycles through plan.amplitudes

    Returns:
        RandomPotential with ω_φ ≥ δ·ω₀ on the positivity grid

    Raises:
        PotentialRejectedError: More than plan.max_tries rejections
    """
    spec = plan.spec
    amplitude = float(plan.amplitudes[index % len(plan.amplitudes)])
    monomials = invariant_monomials(spec, plan.degree)
    if amplitude == 0.0:
        return RandomPotential(ZERO, np.zeros(len(monomials)), 0, 0.0)

    rng = np.random.default_rng([plan.seed, index])
    grid = positivity_points(spec)
    for tries in range(1, plan.max_tries + 1):
        g = rng.standard_normal(len(monomials))
        coefficients = g / np.linalg.norm(g)
        expr: WeightExpr = ZERO
        for c, m in zip(coefficients, monomials):
            expr = expr + Const(amplitude * c / (8.0 * math.pi)) * m
        if float(np.min(relative_eigenvalues(spec, expr, grid))) >= plan.delta:
            logger.debug("Potential %d on '%s' accepted after %d tries", index, spec.name, tries)
            return RandomPotential(expr, coefficients, tries, amplitude)
    raise PotentialRejectedError(
        f"amplitude {amplitude} too large on '{spec.name}': no potential with ω_φ ≥ {plan.delta}·ω₀ "
        f"in {plan.max_tries} tries",
        tries=plan.max_tries,
    )


def random_invariant_function(plan: SamplePlan, index: int, stream: int) -> WeightExpr:
    rng = np.random.default_rng([plan.seed, index, stream])
    expr: WeightExpr = Const(float(rng.standard_normal()))
    for m in invariant_monomials(plan.spec, plan.degree):
        expr = expr + Const(float(rng.standard_normal())) * m
    return expr


def random_coordinate_polynomial(rng: np.random.Generator, dim: int, terms: int = 4) -> WeightExpr:
    coefficients = {}
    for _ in range(terms):
        degree = int(rng.integers(2, 4))
        alpha = [0] * dim
        for i in rng.integers(0, dim, size=degree):
            alpha[int(i)] += 1
        coefficients[tuple(alpha)] = coefficients.get(tuple(alpha), 0.0) + float(rng.standard_normal())
    return polynomial(coefficients)


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 1:
        return np.array([[np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))]])
    return unitary_group.rvs(n, random_state=rng)


# ---------------------------------------------------------------------------
# Sample blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleBlock:
    index: int
    potential: Optional[RandomPotential]
    states: Tuple[MetricState, ...]
    points: Tuple[np.ndarray, ...]
    origins: Tuple[np.ndarray, ...]
    skipped: int
    rejected: Optional[str] = None

    @property
    def samples(self) -> int:
        return int(sum(len(o) for o in self.origins))


def sample_block(plan: SamplePlan, index: int, order: int = JET_ORDER, count: Optional[int] = None) -> SampleBlock:
    """
    Metric states of potential `index` at `count` random points, kept on the plan.

    Points where ω_φ degenerates are dropped and counted; chunks whose
    states cannot be formed are skipped with a warning.
    """
    count = plan.points if count is None else count
    key = (index, order, count)
    if key not in plan.blocks:
        plan.blocks.setdefault(key, _draw_block(plan, index, order, count))
    return plan.blocks[key]


def _draw_block(plan: SamplePlan, index: int, order: int, count: int) -> SampleBlock:
    spec = plan.spec
    try:
        potential = random_potential(plan, index)
    except PotentialRejectedError as e:
        logger.warning("Potential %d rejected: %s", index, e)
        return SampleBlock(index, None, (), (), (), count, rejected=str(e))

    rng = np.random.default_rng([plan.seed, index, 7])
    drawn = spec.sample_points(rng, count)
    positive = relative_eigenvalues(spec, potential.expr, drawn) > 1e-12
    origins_all = np.flatnonzero(positive)
    skipped = int(count - origins_all.size)

    states, points, origins = [], [], []
    for start in range(0, origins_all.size, POINT_CHUNK):
        chunk = origins_all[start:start + POINT_CHUNK]
        try:
            states.append(state_at(spec, potential.expr, drawn[chunk], order=order))
        except (DegenerateMetricError, MomentMapDomainError) as e:
            logger.warning("Skipping %d points of potential %d: %s", chunk.size, index, e)
            skipped += int(chunk.size)
            continue
        points.append(drawn[chunk])
        origins.append(chunk)
    return SampleBlock(index, potential, tuple(states), tuple(points), tuple(origins), skipped)


def block_contexts(block: SampleBlock, plan: SamplePlan):
    """(pair, chunk number, context) for every fitting pair and state chunk"""
    for pair, physical in zip(plan.pairs, plan.physical_pairs):
        for k, state in enumerate(block.states):
            yield pair, k, build_context(state, physical)


# ---------------------------------------------------------------------------
# Worst-case bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class Worst:
    """Running maximum of a per-point residual with the point that attains it"""

    value: float = -math.inf
    where: Dict[str, Any] = field(default_factory=dict)
    samples: int = 0

    def update(self, residual, points: np.ndarray, origins: np.ndarray, index: int, label: str) -> None:
        m = points.shape[0]
        r = np.asarray(residual, dtype=float).reshape(m, -1)
        r = np.where(np.isnan(r), np.inf, r).max(axis=1)
        self.samples += m
        k = int(np.argmax(r))
        if r[k] > self.value:
            self.value = float(r[k])
            self.where = {"potential": index, "sample": int(origins[k]), "label": label, "point": points[k].tolist()}

    def merge(self, other: "Worst") -> "Worst":
        out = Worst(self.value, dict(self.where), self.samples + other.samples)
        if other.value > self.value:
            out.value, out.where = other.value, dict(other.where)
        return out


class BlockResult(NamedTuple):
    worst: Worst
    skipped: int
    rejected: Optional[str]
    details: Dict[str, float]


@dataclass
class AuditEntry:
    name: str
    anchor: str
    kind: str
    value: float
    tolerance: float
    margin: float
    samples: int
    skipped: int
    worst_point: Dict[str, Any]
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "kind": self.kind,
            "value": self.value,
            "tolerance": self.tolerance,
            "margin": self.margin,
            "samples": self.samples,
            "skipped": self.skipped,
            "worst_point": self.worst_point,
            "passed": self.passed,
            "details": self.details,
        }


@dataclass
class AuditReport:
    chart: str
    seed: int
    entries: List[AuditEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failed(self) -> List[str]:
        return [e.name for e in self.entries if not e.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chart": self.chart,
            "seed": self.seed,
            "passed": self.passed,
            "entries": [e.to_dict() for e in self.entries],
        }


# ---------------------------------------------------------------------------
# Identity checks, one function per check; each sees one sample block
# ---------------------------------------------------------------------------

def _scal_v_forms(block, plan, worst, details):
    for pair, k, ctx in block_contexts(block, plan):
        residual = relative_residual(scal_v(ctx, "definition"), scal_v(ctx, "trace"))
        worst.update(residual, block.points[k], block.origins[k], block.index, pair.name)


def _system_residual(block, plan, worst, details):
    for pair, k, ctx in block_contexts(block, plan):
        res = system_residual(ctx)
        residual = relative_residual(res.identity + ctx.w, ctx.w)
        worst.update(np.maximum(residual, np.abs(res.R1)), block.points[k], block.origins[k], block.index, pair.name)


def _laplacian_pair(variant: str):
    def check(block, plan, worst, details):
        f_expr = random_invariant_function(plan, block.index, 11)
        for pair, k, ctx in block_contexts(block, plan):
            f = evaluate_jet(f_expr, ctx.state.jet.coordinates)
            residual = relative_residual(weighted_laplacian(f, ctx, "expanded"), weighted_laplacian(f, ctx, variant))
            worst.update(residual, block.points[k], block.origins[k], block.index, pair.name)
    return check


def _differentiated_trace(block, plan, worst, details):
    spec = plan.spec
    rng = np.random.default_rng([plan.seed, block.index, 13])
    beta = FormField.hessian_of(random_coordinate_polynomial(rng, spec.dim), spec.dim)
    for k, points in enumerate(block.points):
        direction = rng.standard_normal(points.shape)
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        result = diff_trace_check(spec, block.potential.expr, points, beta, direction)
        worst.update(result.residual, points, block.origins[k], block.index, "beta")


def _tensor_identities(block, plan, worst, details):
    f1_expr = random_invariant_function(plan, block.index, 11)
    f2_expr = random_invariant_function(plan, block.index, 12)
    for k, state in enumerate(block.states):
        coords = state.jet.coordinates
        f1, f2 = evaluate_jet(f1_expr, coords), evaluate_jet(f2_expr, coords)
        df1, df2 = f1.gradient(), f2.gradient()
        g_inv = state.inverse("phi")
        S_tensor = covariant_hessian(evaluate_jet(f1_expr * f2_expr, coords), state, "0").full
        S_tensor = 0.5 * (S_tensor + np.swapaxes(S_tensor, -1, -2))

        grad1 = np.einsum("...ij,...j->...i", g_inv, df1)
        grad2 = np.einsum("...ij,...j->...i", g_inv, df2)
        path_a = covector_inner(df1, np.einsum("...ij,...j->...i", S_tensor, grad2), g_inv)
        path_b = np.einsum("...ia,...jb,...ij,...a,...b->...", g_inv, g_inv, S_tensor, df1, df2)
        path_c = np.einsum("...i,...ij,...j->...", grad1, S_tensor, grad2)
        residual = np.maximum(relative_residual(path_a, path_b), relative_residual(path_a, path_c))

        dcf2 = dc(df2, state.J)
        wedge = np.einsum("...i,...j->...ij", df1, dcf2) - np.einsum("...i,...j->...ij", dcf2, df1)
        pairing = relative_residual(covector_inner(df1, df2, state.inverse("0")), trace(wedge, state, "0"))
        worst.update(np.maximum(residual, pairing), block.points[k], block.origins[k], block.index, "tensors")


def _hessian_splitting(block, plan, worst, details):
    f_expr = random_invariant_function(plan, block.index, 11)
    killing = 0.0
    for k, state in enumerate(block.states):
        J = state.J
        f = evaluate_jet(f_expr, state.jet.coordinates)
        lhs = metric_from_form(ddc_matrix(f.hessian(), J), J)
        rhs = 2.0 * covariant_hessian(f, state, "phi").plus
        scale = 1.0 + np.maximum(np.abs(lhs), np.abs(rhs)).reshape(lhs.shape[0], -1).max(axis=1)
        residual = np.abs(lhs - rhs).reshape(lhs.shape[0], -1).max(axis=1) / scale
        for a in range(state.spec.r):
            hess = covariant_hessian(state.mu[..., a], state, "phi")
            minus = np.abs(hess.minus).reshape(lhs.shape[0], -1).max(axis=1)
            size = 1.0 + np.abs(hess.full).reshape(lhs.shape[0], -1).max(axis=1)
            killing = max(killing, float(np.max(minus / size)))
            residual = np.maximum(residual, minus / size)
        worst.update(residual, block.points[k], block.origins[k], block.index, "hessian")
    details["killing_residual"] = max(details.get("killing_residual", 0.0), killing)


def _weight_laplacians(block, plan, worst, details):
    for pair, k, ctx in block_contexts(block, plan):
        laps = weight_laplacians(ctx)
        residual = np.maximum(
            relative_residual(laps.lap_phi, laps.lap_phi_expanded),
            relative_residual(laps.lap0, laps.lap0_expanded),
        )
        worst.update(residual, block.points[k], block.origins[k], block.index, pair.name)


def _moment_map(block, plan, worst, details):
    for k, state in enumerate(block.states):
        J = state.J
        dcphi = dc(state.jet.perturbation.gradient(), J)
        shift = np.einsum("...i,...ai->...a", dcphi, state.xi)
        residual = np.abs(state.mu.value - state.mu0.value - shift)
        expected = np.einsum("...ij,...aj->...ai", state.omega0.value, state.xi)
        residual = np.maximum(
            residual.max(axis=-1),
            np.abs(state.mu0.gradient() - expected).reshape(residual.shape[0], -1).max(axis=1),
        )
        worst.update(residual, block.points[k], block.origins[k], block.index, "moment")


def _kahler_closed(block, plan, worst, details):
    for k, state in enumerate(block.states):
        worst.update(exterior_derivative_residual(state.omega), block.points[k], block.origins[k], block.index, "omega")


def _ricci_v_closed(block, plan, worst, details):
    for pair, k, ctx in block_contexts(block, plan):
        form = weighted_ricci_jet(ctx)
        size = 1.0 + np.abs(form.value).reshape(form.value.shape[0], -1).max(axis=1)
        worst.update(exterior_derivative_residual(form) / size, block.points[k], block.origins[k], block.index, pair.name)


def _frame_independence(block, plan, worst, details):
    rng = np.random.default_rng([plan.seed, block.index, 17])
    n = plan.spec.n
    for k, state in enumerate(block.states):
        base = nabla0_omega_norm(state)
        residual = relative_residual(base, nabla0_omega_norm_coordinates(state))
        for _ in range(2):
            residual = np.maximum(residual, relative_residual(base, nabla0_omega_norm(state, random_unitary(rng, n))))
        worst.update(residual, block.points[k], block.origins[k], block.index, "frames")


def _leibniz(block, plan, worst, details):
    f_expr = random_invariant_function(plan, block.index, 11)
    h_expr = random_invariant_function(plan, block.index, 12)
    for pair, k, ctx in block_contexts(block, plan):
        coords = ctx.state.jet.coordinates
        f, h = evaluate_jet(f_expr, coords), evaluate_jet(h_expr, coords)
        lhs = weighted_laplacian(f * h, ctx)
        rhs = (
            f.value * weighted_laplacian(h, ctx)
            + h.value * weighted_laplacian(f, ctx)
            + 2.0 * gradient_pairing(f, h, ctx.state)
        )
        worst.update(relative_residual(lhs, rhs), block.points[k], block.origins[k], block.index, pair.name)


def _ellipticity(block, plan, worst, details):
    lowest = math.inf
    for pair, k, ctx in block_contexts(block, plan):
        target = ctx.state.inverse("phi")
        residual = np.zeros(target.shape[0])
        for variant in ("expanded", "adjoint"):
            symbol = second_order_symbol(ctx, variant)
            residual = np.maximum(residual, relative_residual(symbol, target).reshape(target.shape[0], -1).max(axis=1))
            eig = np.linalg.eigvalsh(symbol)[..., 0]
            lowest = min(lowest, float(np.min(eig)))
            residual = np.where(eig > 0, residual, np.inf)
        worst.update(residual, block.points[k], block.origins[k], block.index, pair.name)
    details["lowest_symbol_eigenvalue"] = min(details.get("lowest_symbol_eigenvalue", math.inf), lowest)


def _collapse(block, plan, worst, details):
    spec = plan.spec
    pair = spec.physical_pair(classical_pair(8.0 * math.pi, normalized_box(spec.r)))
    f_expr = random_invariant_function(plan, block.index, 11)
    for k, state in enumerate(block.states):
        ctx = build_context(state, pair)
        f = evaluate_jet(f_expr, state.jet.coordinates)
        ric0 = state.ric0.value
        residual = np.maximum.reduce([
            relative_residual(scal_v(ctx, "definition"), scal(state)),
            relative_residual(scal_v(ctx, "trace"), scal(state)),
            relative_residual(weighted_laplacian(f, ctx, "adjoint"), laplacian(f, state, "phi")),
            relative_residual(weighted_laplacian(f, ctx, "expanded"), laplacian(f, state, "phi")),
            relative_residual(weighted_trace(ric0, ricci0_moment(ctx), ctx), trace(ric0, state, "phi")),
            relative_residual(compute_F(ctx), state.log_volume_ratio.value),
        ])
        worst.update(residual, block.points[k], block.origins[k], block.index, "v=1")


IDENTITY_RUNNERS: Dict[str, Tuple[Callable, int]] = {
    "scal_v_forms": (_scal_v_forms, JET_ORDER),
    "system_residual": (_system_residual, JET_ORDER),
    "laplacian_forms": (_laplacian_pair("adjoint"), JET_ORDER),
    "laplacian_trace": (_laplacian_pair("trace"), JET_ORDER),
    "differentiated_trace": (_differentiated_trace, JET_ORDER),
    "tensor_identities": (_tensor_identities, JET_ORDER),
    "hessian_splitting": (_hessian_splitting, JET_ORDER),
    "weight_laplacians": (_weight_laplacians, JET_ORDER),
    "moment_map": (_moment_map, JET_ORDER),
    "kahler_closed": (_kahler_closed, JET_ORDER),
    "ricci_v_closed": (_ricci_v_closed, EXTENDED_JET_ORDER),
    "frame_independence": (_frame_independence, JET_ORDER),
    "leibniz": (_leibniz, JET_ORDER),
    "ellipticity": (_ellipticity, JET_ORDER),
    "collapse": (_collapse, JET_ORDER),
}


def _run_identity_block(check: Callable, plan: SamplePlan, index: int, order: int) -> BlockResult:
    block = sample_block(plan, index, order)
    worst = Worst()
    details: Dict[str, float] = {}
    if block.rejected is None:
        check(block, plan, worst, details)
    return BlockResult(worst, block.skipped, block.rejected, details)


def _merge_details(results: Sequence[BlockResult]) -> Dict[str, Any]:
    merged: Dict[str, Any] = {}
    for r in results:
        for key, value in r.details.items():
            if key.startswith("lowest"):
                merged[key] = min(merged.get(key, math.inf), value)
            else:
                merged[key] = max(merged.get(key, -math.inf), value)
    rejected = [r.rejected for r in results if r.rejected]
    if rejected:
        merged["rejected_potentials"] = len(rejected)
    return merged


def _self_adjointness_entry(plan: SamplePlan) -> AuditEntry:
    tolerance = get_check_tolerance("self_adjointness")
    anchor = get_check_anchor("self_adjointness")
    if plan.chart != "sphere":
        return AuditEntry("self_adjointness", anchor, "identity", 0.0, tolerance, tolerance, 0, 0, {}, True,
                          {"skipped_reason": f"global quadrature needs the sphere chart, plan uses '{plan.chart}'"})

    rng = np.random.default_rng([plan.seed, 19])
    worst = Worst()
    profiles = 0
    for pair in plan.pairs:
        try:
            profile = solve_quadrature(pair, count=65).profile
            profiles += 1
        except NonpositiveProfileError:
            profile = SphereProfile.round()
        f = polynomial({(d,): float(c) for d, c in enumerate(rng.standard_normal(4))})
        h = polynomial({(d,): float(c) for d, c in enumerate(rng.standard_normal(4))})
        result = weighted_self_adjointness(profile, pair, f, h)
        worst.update(np.array([result.residual]), np.zeros((1, 1)), np.zeros(1, dtype=int), -1, pair.name)
    value = worst.value if worst.samples else math.nan
    return AuditEntry(
        name="self_adjointness", anchor=anchor, kind="identity",
        value=value, tolerance=tolerance, margin=tolerance - value,
        samples=worst.samples, skipped=0, worst_point=worst.where,
        passed=bool(worst.samples and value <= tolerance),
        details={"quadrature_profiles": profiles},
    )


def run_identity(check_id: str, plan: SamplePlan, threads: int = 1) -> AuditEntry:
    """
    Run one identity over every potential of the plan.

    Args:
        check_id: Key of IDENTITY_CHECKS
        plan: SamplePlan
        threads: Worker threads for the potentials

    Returns:
        AuditEntry with the maximal relative residual and where it occurs
    """
    if check_id == "self_adjointness":
        return _self_adjointness_entry(plan)
    if check_id not in IDENTITY_RUNNERS:
        raise ValueError(f"Unknown identity check: {check_id}")

    check, order = IDENTITY_RUNNERS[check_id]
    results = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_run_identity_block)(check, plan, i, order) for i in range(plan.potentials)
    )
    worst = Worst()
    for r in results:
        worst = worst.merge(r.worst)

    tolerance = get_check_tolerance(check_id)
    value = worst.value if worst.samples else math.nan
    passed = bool(worst.samples) and value <= tolerance
    entry = AuditEntry(
        name=check_id, anchor=get_check_anchor(check_id), kind="identity",
        value=value, tolerance=tolerance, margin=tolerance - value,
        samples=worst.samples, skipped=sum(r.skipped for r in results),
        worst_point=worst.where, passed=passed, details=_merge_details(results),
    )
    logger.info("%s on '%s': max residual %.3e over %d samples", check_id, plan.chart, value, worst.samples)
    return entry


# ---------------------------------------------------------------------------
# Inequality audits: per-point tables, then one fit over the whole table
# ---------------------------------------------------------------------------

def _frame(columns: Dict[str, np.ndarray], block: SampleBlock, k: int, pair: str, plan: SamplePlan) -> pd.DataFrame:
    origins = block.origins[k]
    table = pd.DataFrame(columns)
    table.insert(0, "potential", block.index)
    table.insert(1, "sample", origins)
    table.insert(2, "pair", pair)
    table["first_half"] = origins < plan.points
    table["point"] = [p.tolist() for p in block.points[k]]
    return table


def _trace_columns(block, plan):
    tables = []
    for pair, k, ctx in block_contexts(block, plan):
        state, n = ctx.state, ctx.n
        ratio = np.exp(compute_F(ctx)) / ctx.v
        L0 = trace(state.omega.value, state, "0")
        Lp = trace(state.omega0.value, state, "phi")
        bounds = np.stack([
            L0 - n * ratio * Lp ** (n - 1),
            Lp - n / ratio * L0 ** (n - 1),
            n * ratio ** (1.0 / n) - L0,
            n * ratio ** (-1.0 / n) - Lp,
        ], axis=-1)
        tables.append(_frame({"violation": bounds.max(axis=-1), "product": L0 * Lp}, block, k, pair.name, plan))
    return tables


def _ricci_columns(block, plan):
    tables = []
    A0 = curvature_bounds(block.states).A0 if block.states else 0.0
    for pair, k, ctx in block_contexts(block, plan):
        mu_ric = ricci0_moment(ctx)
        lhs = np.abs(weighted_trace(ctx.state.ric0.value, mu_ric, ctx))
        correction = np.abs(np.einsum("...a,...a->...", ctx.v_a, mu_ric)) / ctx.v
        tables.append(_frame({
            "lhs": lhs, "trace_phi_omega0": trace(ctx.state.omega0.value, ctx.state, "phi"),
            "assembled": correction, "A0": np.full(lhs.shape, A0),
        }, block, k, pair.name, plan))
    return tables


def _second_order_columns(block, plan):
    tables = []
    for pair, k, ctx in block_contexts(block, plan):
        state = ctx.state
        F = compute_F_jet(ctx)
        L0 = trace(state.omega, state, "0")
        tables.append(_frame({
            "lap0_F": laplacian(F, state, "0"),
            "H": log_v_hessian_pairing(ctx),
            "grad_omega": nabla0_omega_norm(state),
            "lap_v_L0": weighted_laplacian(L0, ctx),
            "lap_v_logL0": weighted_laplacian(L0.log(), ctx),
            "L0": L0.value,
            "Lp": trace(state.omega0.value, state, "phi"),
        }, block, k, pair.name, plan))
    return tables


def _c2_columns(block, plan):
    tables = []
    for pair, k, ctx in block_contexts(block, plan):
        state, n = ctx.state, ctx.n
        F = compute_F_jet(ctx)
        dF = F.grad_jet()
        norm = taylor.einsum("i,i->", dF, taylor.einsum("ij,j->i", state.g_inv, dF))
        L0 = trace(state.omega, state, "0")
        u = (F * 0.5).exp() * norm + L0 * plan.K
        floor = plan.K * n * (np.exp(F.value) / ctx.v) ** (1.0 / n)
        tables.append(_frame({
            "u": u.value,
            "lap_v_u": weighted_laplacian(u, ctx),
            "L0": L0.value,
            "F": F.value,
            "floor": floor,
            "L": np.full(u.value.shape, pair.bounds.L if pair.bounds else math.nan),
        }, block, k, pair.name, plan))
    return tables


def _sign_columns(block, plan):
    return [
        _frame({"H": log_v_hessian_pairing(ctx)}, block, k, pair.name, plan)
        for pair, k, ctx in block_contexts(block, plan)
    ]


AUDIT_COLUMNS: Dict[str, Tuple[Callable, int]] = {
    "trace_inequalities": (_trace_columns, JET_ORDER),
    "ricci_trace_bound": (_ricci_columns, JET_ORDER),
    "yau_inequality": (_second_order_columns, JET_ORDER),
    "cgp_inequality": (_second_order_columns, JET_ORDER),
    "c2_inequality": (_c2_columns, EXTENDED_JET_ORDER),
    "log_concavity_sign": (_sign_columns, JET_ORDER),
}


def _audit_table(check_id: str, plan: SamplePlan, threads: int) -> Tuple[pd.DataFrame, int, int]:
    builder, order = AUDIT_COLUMNS[check_id]

    def one(index: int):
        block = sample_block(plan, index, order, 2 * plan.points)
        return (builder(block, plan) if block.rejected is None else []), block.skipped, block.rejected is not None

    results = Parallel(n_jobs=threads, prefer="threads")(delayed(one)(i) for i in range(plan.potentials))
    tables = [t for r in results for t in r[0]]
    table = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
    return table, sum(r[1] for r in results), sum(int(r[2]) for r in results)


def _worst_row(table: pd.DataFrame, column: str) -> Dict[str, Any]:
    if table.empty:
        return {}
    row = table.loc[table[column].idxmax()]
    return {"potential": int(row["potential"]), "sample": int(row["sample"]), "label": row["pair"], "point": row["point"]}


class FittedConstant(NamedTuple):
    value: float
    half: float
    stable: bool
    worst: Dict[str, Any]


def fit_constant(table: pd.DataFrame, column: str) -> FittedConstant:
    """Smallest constant over the table, also on its first half, clipped at zero"""
    if table.empty:
        return FittedConstant(math.nan, math.nan, False, {})
    values = table[column].replace([np.inf, -np.inf], np.nan)
    full = max(float(values.max()), 0.0)
    half = max(float(values[table["first_half"]].max()), 0.0)
    stable = bool(np.isfinite(full) and full <= 2.0 * half + STABILITY_SLACK)
    return FittedConstant(full, half, stable, _worst_row(table, column))


def trace_verdict(table: pd.DataFrame, n: int) -> Tuple[float, Dict[str, float], bool]:
    """
    Largest violation of the four trace bounds against the absolute slack;
    for n = 1 the product Λ₀Λ_φ = 1 must also hold within the slack.
    """
    value = float(table["violation"].max())
    details: Dict[str, float] = {}
    passed = value <= INEQUALITY_SLACK
    if n == 1:
        defect = float((table["product"] - 1.0).abs().max())
        details["product_defect"] = defect
        passed = passed and defect <= INEQUALITY_SLACK
    return value, details, passed


def _log_concave_split(plan: SamplePlan) -> Tuple[List[str], List[str]]:
    concave, other = [], []
    for pair in plan.pairs:
        (concave if is_log_concave(pair.v, pair.polytope).log_concave else other).append(pair.name)
    return concave, other


def _fit_entry(check_id: str, table: pd.DataFrame, column: str, skipped: int, details: Dict[str, Any]) -> AuditEntry:
    fit = fit_constant(table, column)
    details = dict(details, fitted_on_first_half=fit.half)
    return AuditEntry(
        name=check_id, anchor=get_check_anchor(check_id), kind="inequality",
        value=fit.value, tolerance=math.inf, margin=2.0 * fit.half + STABILITY_SLACK - fit.value,
        samples=int(len(table)), skipped=skipped, worst_point=fit.worst,
        passed=fit.stable, details=details,
    )


def run_inequality_audit(check_id: str, plan: SamplePlan, threads: int = 1) -> AuditEntry:
    """
    Fit or check one inequality over twice the plan's points per potential.

    Fitted constants pass when finite and when doubling the sample count at
    most doubles them; the trace bounds and the sign term are hard checks.

    Args:
        check_id: Key of INEQUALITY_CHECKS
        plan: SamplePlan
        threads: Worker threads for the potentials

    Returns:
        AuditEntry
    """
    if check_id not in AUDIT_COLUMNS:
        raise ValueError(f"Unknown inequality audit: {check_id}")
    table, skipped, rejected = _audit_table(check_id, plan, threads)
    details: Dict[str, Any] = {"rejected_potentials": rejected} if rejected else {}
    anchor = get_check_anchor(check_id)

    if table.empty:
        return AuditEntry(check_id, anchor, "inequality", math.nan, math.nan, math.nan, 0, skipped, {}, False, details)

    if check_id == "trace_inequalities":
        value, extra, passed = trace_verdict(table, plan.spec.n)
        details.update(extra)
        entry = AuditEntry(
            check_id, anchor, "inequality", value, INEQUALITY_SLACK, INEQUALITY_SLACK - value,
            int(len(table)), skipped, _worst_row(table, "violation"), passed, details,
        )

    elif check_id == "ricci_trace_bound":
        A0 = float(table["A0"].max())
        table = table.assign(C=table["lhs"] - A0 * table["trace_phi_omega0"])
        details.update(A0=A0, assembled=float(table["assembled"].max()))
        entry = _fit_entry(check_id, table, "C", skipped, details)

    elif check_id in ("yau_inequality", "cgp_inequality"):
        concave, other = _log_concave_split(plan)
        fit_on = concave or other
        details.update(log_concave=concave, non_log_concave=other)
        subset = table[table["pair"].isin(fit_on)]
        if check_id == "yau_inequality":
            C = (subset["lap0_F"] - subset["H"] + subset["grad_omega"] - subset["lap_v_L0"]) / (subset["L0"] * subset["Lp"] + 1.0)
        else:
            C = ((subset["lap0_F"] - subset["H"]) / subset["L0"] - subset["lap_v_logL0"]) / subset["Lp"]
        entry = _fit_entry(check_id, subset.assign(C=C), "C", skipped, details)

    elif check_id == "c2_inequality":
        n = plan.spec.n
        ratio = -table["lap_v_u"] / (table["L0"] ** (3 * n - 3) * table["u"])
        floor_gap = float((table["floor"] - table["u"]).max())
        sup_F = float(table["F"].abs().max())
        uniform = float((plan.K * n * table["L"] ** (-1.0 / n) * math.exp(-sup_F / n) - table["u"]).max())
        details.update(K=plan.K, floor_gap=floor_gap, uniform_floor_gap=uniform, sup_abs_F=sup_F)
        entry = _fit_entry(check_id, table.assign(C=ratio), "C", skipped, details)
        entry.passed = entry.passed and floor_gap <= INEQUALITY_SLACK

    else:
        concave, other = _log_concave_split(plan)
        H_concave = float(table.loc[table["pair"].isin(concave), "H"].max()) if concave else -math.inf
        controls = [name for name in other if name in NON_LOG_CONCAVE]
        H_control = {name: float(table.loc[table["pair"] == name, "H"].max()) for name in controls}
        details.update(log_concave=concave, controls=H_control)
        passed = H_concave <= INEQUALITY_SLACK and all(h > CONTROL_VIOLATION for h in H_control.values())
        entry = AuditEntry(
            check_id, anchor, "inequality", H_concave, INEQUALITY_SLACK, INEQUALITY_SLACK - H_concave,
            int(len(table)), skipped, _worst_row(table[table["pair"].isin(concave)], "H") if concave else {},
            passed, details,
        )

    logger.info("%s on '%s': value %.6g (%s)", check_id, plan.chart, entry.value, "pass" if entry.passed else "fail")
    return entry


def run_battery(
    plan: SamplePlan,
    identities: Optional[Sequence[str]] = None,
    audits: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> AuditReport:
    """
    Every requested identity and audit, each listed exactly once.

    Args:
        plan: SamplePlan
        identities: Identity check ids, all by default
        audits: Inequality audit ids, all by default
        threads: Worker threads

    Returns:
        AuditReport in the order of the check tables
    """
    identities = list(IDENTITY_CHECKS) if identities is None else list(dict.fromkeys(identities))
    audits = list(INEQUALITY_CHECKS) if audits is None else list(dict.fromkeys(audits))
    entries = [run_identity(c, plan, threads) for c in identities]
    entries += [run_inequality_audit(c, plan, threads) for c in audits]
    return AuditReport(chart=plan.chart, seed=plan.seed, entries=entries)
