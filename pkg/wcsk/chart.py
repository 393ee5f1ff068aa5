"""
Chart module for the weighted cscK lab
Pointwise Kähler geometry on torus-invariant charts: jets of the potentials,
metrics, Ricci forms, moment maps, traces, Laplacians and connection data
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

try:
    from wcsk import taylor
    from wcsk.taylor import Jet, get_basis
    from wcsk.weights import (
        Const, Coord, Polytope, WeightExpr, WeightPair, evaluate_jet, log,
    )
    from wcsk.utils import DEGENERACY_THRESHOLD, DOMAIN_TOLERANCE, JET_ORDER
except ImportError:
    # For direct execution
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent.parent))
    from wcsk import taylor
    from wcsk.taylor import Jet, get_basis
    from wcsk.weights import (
        Const, Coord, Polytope, WeightExpr, WeightPair, evaluate_jet, log,
    )
    from wcsk.utils import DEGENERACY_THRESHOLD, DOMAIN_TOLERANCE, JET_ORDER

logger = logging.getLogger(__name__)


class DegenerateMetricError(ValueError):
    """g_phi is not positive definite at an evaluated point"""


class MomentMapDomainError(ValueError):
    """Moment map value outside the polytope"""


def complex_structure(n: int) -> np.ndarray:
    """J on interleaved coordinates (x1, y1, ..., xn, yn), J∂x = ∂y"""
    block = np.array([[0.0, -1.0], [1.0, 0.0]])
    return np.kron(np.eye(n), block)


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChartSpec:
    """
    A torus-invariant Kähler chart.

    The torus of rank r rotates the first r complex coordinates. The physical
    moment polytope is mapped to [-1, 1]^r by x = scale·μ + shift.
    """

    name: str
    n: int
    r: int
    potential: WeightExpr
    moment_offset: Tuple[float, ...]
    polytope: Polytope
    scale: Tuple[float, ...]
    shift: Tuple[float, ...]
    sample_radius: float
    invariant_functions: Tuple[WeightExpr, ...]

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def J(self) -> np.ndarray:
        return complex_structure(self.n)

    @property
    def rotation_generators(self) -> np.ndarray:
        """E_a with ξ_a(u) = E_a u"""
        gens = np.zeros((self.r, self.dim, self.dim))
        for a in range(self.r):
            gens[a, 2 * a + 1, 2 * a] = 1.0
            gens[a, 2 * a, 2 * a + 1] = -1.0
        return gens

    def rotation_fields(self, points: np.ndarray) -> np.ndarray:
        return np.einsum("aij,...j->...ai", self.rotation_generators, points)

    def normalize(self, mu: np.ndarray) -> np.ndarray:
        return np.asarray(self.scale) * mu + np.asarray(self.shift)

    def physical_pair(self, pair: WeightPair) -> WeightPair:
        """Weights given on [-1, 1]^r, pulled back to the physical moment polytope"""
        return pair.pullback(np.diag(self.scale), np.asarray(self.shift), self.polytope)

    def fits(self, pair: WeightPair) -> bool:
        used = pair.v.variables() | pair.w.variables()
        return not used or max(used) < self.r

    def sample_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Points with every complex coordinate uniform in the disk of radius sample_radius"""
        radius = self.sample_radius * np.sqrt(rng.uniform(size=(count, self.n)))
        angle = rng.uniform(0.0, 2.0 * math.pi, size=(count, self.n))
        points = np.empty((count, self.dim))
        points[:, 0::2] = radius * np.cos(angle)
        points[:, 1::2] = radius * np.sin(angle)
        return points


def _radius_squared(k: int) -> WeightExpr:
    x, y = Coord(2 * k), Coord(2 * k + 1)
    return x * x + y * y


def fubini_study_potential(k: int) -> WeightExpr:
    """(1/4π) log(1 + |z_k|²), unit area"""
    return Const(1.0 / (4.0 * math.pi)) * log(1.0 + _radius_squared(k))


def sphere_moment(k: int) -> WeightExpr:
    """Normalized moment (|z|² − 1)/(|z|² + 1) of the k-th factor, a global function on the sphere"""
    r2 = _radius_squared(k)
    return (r2 - 1.0) / (r2 + 1.0)


def sphere_embedding(k: int) -> Tuple[WeightExpr, WeightExpr, WeightExpr]:
    r2 = _radius_squared(k)
    x, y = Coord(2 * k), Coord(2 * k + 1)
    return (2.0 * x / (1.0 + r2), 2.0 * y / (1.0 + r2), sphere_moment(k))


_HALF = 1.0 / (4.0 * math.pi)


def sphere_chart() -> ChartSpec:
    return ChartSpec(
        name="sphere", n=1, r=1,
        potential=fubini_study_potential(0),
        moment_offset=(-_HALF,),
        polytope=Polytope.interval(-_HALF, _HALF),
        scale=(4.0 * math.pi,), shift=(0.0,),
        sample_radius=2.0,
        invariant_functions=(sphere_moment(0),),
    )


def flat_chart(radius: float = 2.0, potential: Optional[WeightExpr] = None) -> ChartSpec:
    """Euclidean background ψ₀ = |z|²/4, so g₀ is the standard metric and μ₀ = |z|²/2"""
    r2 = _radius_squared(0)
    psi0 = potential if potential is not None else Const(0.25) * r2
    lower, upper = -1.0, 0.5 * radius * radius + 1.0
    return ChartSpec(
        name="flat", n=1, r=1,
        potential=psi0,
        moment_offset=(0.0,),
        polytope=Polytope.interval(lower, upper),
        scale=(2.0 / (upper - lower),), shift=(-(upper + lower) / (upper - lower),),
        sample_radius=radius,
        invariant_functions=(r2 / (radius * radius),),
    )


def product_chart() -> ChartSpec:
    return ChartSpec(
        name="product", n=2, r=2,
        potential=fubini_study_potential(0) + fubini_study_potential(1),
        moment_offset=(-_HALF, -_HALF),
        polytope=Polytope.box([-_HALF, -_HALF], [_HALF, _HALF]),
        scale=(4.0 * math.pi, 4.0 * math.pi), shift=(0.0, 0.0),
        sample_radius=2.0,
        invariant_functions=(sphere_moment(0), sphere_moment(1)),
    )


def product_partial_chart() -> ChartSpec:
    """Product of two spheres with the circle rotating the first factor only"""
    return ChartSpec(
        name="product_partial", n=2, r=1,
        potential=fubini_study_potential(0) + fubini_study_potential(1),
        moment_offset=(-_HALF,),
        polytope=Polytope.interval(-_HALF, _HALF),
        scale=(4.0 * math.pi,), shift=(0.0,),
        sample_radius=2.0,
        invariant_functions=(sphere_moment(0),) + sphere_embedding(1),
    )


CHART_BUILDERS: dict = {
    "sphere": sphere_chart,
    "flat": flat_chart,
    "product": product_chart,
    "product_partial": product_partial_chart,
}


def get_chart(name: str) -> ChartSpec:
    if name not in CHART_BUILDERS:
        raise ValueError(f"Unknown chart family: {name}")
    return CHART_BUILDERS[name]()


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PotentialJet:
    spec: ChartSpec
    point: np.ndarray
    coordinates: Tuple[Jet, ...]
    background: Jet
    perturbation: Jet

    @property
    def order(self) -> int:
        return self.background.order

    def derivatives(self, which: str, k: int) -> np.ndarray:
        source = self.background if which == "background" else self.perturbation
        return source.derivative_tensor(k)

    def angular_residual(self) -> float:
        """Largest coefficient of ξ_a(f) for both potentials; zero for invariant inputs"""
        worst = 0.0
        for a in range(self.spec.r):
            field = self.spec.rotation_generators[a]
            for f in (self.background, self.perturbation):
                lie = None
                for i in range(self.spec.dim):
                    coeff = sum(field[i, j] * self.coordinates[j] for j in range(self.spec.dim) if field[i, j] != 0.0)
                    if isinstance(coeff, int):
                        continue
                    term = coeff * f.partial(i)
                    lie = term if lie is None else lie + term
                if lie is not None:
                    worst = max(worst, float(np.max(np.abs(lie.coef))))
        return worst


def jet_at(spec: ChartSpec, phi: WeightExpr, point: np.ndarray, order: int = JET_ORDER) -> PotentialJet:
    """
    Taylor jets of ψ₀ and φ at `point` (shape (..., 2n)).

    Args:
        spec: Chart
        phi: Invariant perturbation potential
        point: Chart point(s)
        order: Jet order, 4 by default

    Returns:
        PotentialJet with exact derivatives up to `order`
    """
    point = np.asarray(point, dtype=float)
    basis = get_basis(spec.dim, order)
    coords = tuple(Jet.variables(point, basis))
    return PotentialJet(
        spec=spec,
        point=point,
        coordinates=coords,
        background=evaluate_jet(spec.potential, coords),
        perturbation=evaluate_jet(phi, coords),
    )


# ---------------------------------------------------------------------------
# Form and metric algebra (arrays or jets)
# ---------------------------------------------------------------------------

def matmul(a, b):
    return taylor.einsum("ij,jk->ik", a, b)


def ddc_matrix(hess, J: np.ndarray):
    """Matrix of dd^c f from the real Hessian: JᵀH − HJ"""
    return taylor.einsum("ki,kj->ij", J, hess) - taylor.einsum("ik,kj->ij", hess, J)


def metric_from_form(omega, J: np.ndarray):
    """g(X, Y) = ω(X, JY)"""
    return taylor.einsum("ik,kj->ij", omega, J)


def trace_with(alpha, g_inv, J: np.ndarray):
    """Λ(α) = ½ tr(g⁻¹ A J), normalized so Λ_ω(ω) = n"""
    return taylor.trace(matmul(g_inv, metric_from_form(alpha, J))) * 0.5


def form_inner(alpha: np.ndarray, beta: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """g(α, β) for 2-forms, ½ α_ij β_ab g^{ia} g^{jb}"""
    return 0.5 * np.einsum("...ij,...ia,...jb,...ab->...", alpha, g_inv, g_inv, beta)


def covector_inner(a: np.ndarray, b: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...ij,...j->...", a, g_inv, b)


def _permute3(jet: Jet, perm: Tuple[int, int, int]) -> Jet:
    nd = jet.coef.ndim
    batch = list(range(nd - 4))
    axes = batch + [nd - 4 + p for p in perm] + [nd - 1]
    return Jet(jet.coef.transpose(axes), jet.basis, jet.order)


def christoffel(g: Jet, g_inv: Jet) -> Jet:
    """Γ[i, j, k] = Γ^i_{jk} as a jet"""
    dim = g.shape[-1]
    dg = Jet.stack([g.partial(a) for a in range(dim)], axis=-3)
    lower = (_permute3(dg, (1, 0, 2)) + _permute3(dg, (1, 2, 0)) - dg) * 0.5
    return taylor.einsum("il,ljk->ijk", g_inv, lower)


def exterior_derivative_residual(form: Jet) -> np.ndarray:
    """max |dα_{ijk}| from the first derivatives of a 2-form jet"""
    dim = form.shape[-1]
    d = np.stack([form.partial(a).value for a in range(dim)], axis=-3)
    cyclic = d + np.moveaxis(d, -3, -1) + np.moveaxis(d, -1, -3)
    return np.max(np.abs(cyclic), axis=(-3, -2, -1))


# ---------------------------------------------------------------------------
# Metric state
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetricState:
    jet: PotentialJet
    omega0: Jet
    omega: Jet
    g0: Jet
    g: Jet
    g0_inv: Jet
    g_inv: Jet
    logdet0: Jet
    logdet: Jet
    log_volume_ratio: Jet
    christoffel0: Jet
    christoffel: Jet
    ric0: Optional[Jet]
    ric: Optional[Jet]
    mu0: Jet
    mu: Jet
    xi: np.ndarray

    @property
    def spec(self) -> ChartSpec:
        return self.jet.spec

    @property
    def J(self) -> np.ndarray:
        return self.spec.J

    @property
    def point(self) -> np.ndarray:
        return self.jet.point

    @property
    def volume_ratio(self) -> np.ndarray:
        return np.exp(self.log_volume_ratio.value)

    def inverse(self, which: str = "phi") -> np.ndarray:
        return (self.g_inv if which == "phi" else self.g0_inv).value

    def metric(self, which: str = "phi") -> np.ndarray:
        return (self.g if which == "phi" else self.g0).value

    def riemann0(self) -> np.ndarray:
        """R(X, Y, Z, W) = g₀(R(X, Y)Z, W) of the background metric, coordinate components"""
        gamma = self.christoffel0.value
        dim = self.spec.dim
        dgamma = np.stack([self.christoffel0.partial(a).value for a in range(dim)], axis=-4)
        # up[i, j, k, l] = R^i_{jkl}
        up = (
            np.einsum("...kilj->...ijkl", dgamma)
            - np.einsum("...likj->...ijkl", dgamma)
            + np.einsum("...ikm,...mlj->...ijkl", gamma, gamma)
            - np.einsum("...ilm,...mkj->...ijkl", gamma, gamma)
        )
        return np.einsum("...iw,...ijkl->...kljw", self.g0.value, up)


def metric_state(jet: PotentialJet) -> MetricState:
    """
    Derived geometry at the jet's point(s).

    Args:
        jet: PotentialJet of order ≥ 3; Ricci forms need order ≥ 4

    Returns:
        MetricState

    Raises:
        DegenerateMetricError: g_φ has an eigenvalue ≤ 1e-12
        MomentMapDomainError: μ_φ leaves the polytope
    """
    spec = jet.spec
    J = spec.J
    total = jet.background + jet.perturbation

    omega0 = ddc_matrix(jet.background.hessian_jet(), J)
    omega = ddc_matrix(total.hessian_jet(), J)
    g0 = metric_from_form(omega0, J)
    g = metric_from_form(omega, J)

    for label, metric in (("g_0", g0), ("g_phi", g)):
        lowest = np.linalg.eigvalsh(metric.value)[..., 0]
        if np.any(lowest <= DEGENERACY_THRESHOLD):
            raise DegenerateMetricError(
                f"{label} degenerate at {int(np.sum(lowest <= DEGENERACY_THRESHOLD))} point(s)"
            )

    g0_inv = taylor.inverse(g0)
    g_inv = taylor.inverse(g)
    logdet0 = taylor.logdet(g0)
    logdet = taylor.logdet(g)
    log_volume_ratio = (logdet - logdet0) * 0.5

    ric0 = ric = None
    if jet.order >= 4:
        ric0 = ddc_matrix(logdet0.hessian_jet(), J) * -0.25
        ric = ric0 - ddc_matrix(log_volume_ratio.hessian_jet(), J) * 0.5

    mu0 = _moment_map(spec, jet.coordinates, jet.background)
    mu = _moment_map(spec, jet.coordinates, total)
    if not np.all(spec.polytope.contains(mu.value, DOMAIN_TOLERANCE)):
        raise MomentMapDomainError(f"mu_phi leaves the moment polytope on chart '{spec.name}'")

    return MetricState(
        jet=jet,
        omega0=omega0, omega=omega, g0=g0, g=g, g0_inv=g0_inv, g_inv=g_inv,
        logdet0=logdet0, logdet=logdet, log_volume_ratio=log_volume_ratio,
        christoffel0=christoffel(g0, g0_inv), christoffel=christoffel(g, g_inv),
        ric0=ric0, ric=ric,
        mu0=mu0, mu=mu,
        xi=spec.rotation_fields(jet.point),
    )


def _moment_map(spec: ChartSpec, coords: Sequence[Jet], potential: Jet) -> Jet:
    """μ^a = d^cψ(ξ_a) + c_a = Σ_{i in block a} u_i ∂_iψ + c_a"""
    components = []
    for a in range(spec.r):
        i, j = 2 * a, 2 * a + 1
        mu = coords[i] * potential.partial(i) + coords[j] * potential.partial(j) + spec.moment_offset[a]
        components.append(mu)
    return Jet.stack(components, axis=-1)


def state_at(spec: ChartSpec, phi: WeightExpr, points: np.ndarray, order: int = JET_ORDER) -> MetricState:
    return metric_state(jet_at(spec, phi, points, order))


def relative_eigenvalues(spec: ChartSpec, phi: WeightExpr, points: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of g_φ relative to g₀ (order-2 jets only)"""
    jet = jet_at(spec, phi, points, order=2)
    J = spec.J
    g0 = metric_from_form(ddc_matrix(jet.background.hessian(), J), J)
    g = metric_from_form(ddc_matrix((jet.background + jet.perturbation).hessian(), J), J)
    chol = np.linalg.cholesky(g0)
    half = np.linalg.solve(chol, g)
    relative = np.linalg.solve(chol, np.swapaxes(half, -1, -2))
    return np.linalg.eigvalsh(0.5 * (relative + np.swapaxes(relative, -1, -2)))[..., 0]


# ---------------------------------------------------------------------------
# Traces, gradients and Hessians
# ---------------------------------------------------------------------------

def trace(alpha, state: MetricState, relative_to: str = "phi"):
    """Λ(α) with respect to ω_φ or ω₀; α may be an array or a jet"""
    g_inv = state.g_inv if relative_to == "phi" else state.g0_inv
    if not isinstance(alpha, Jet):
        g_inv = g_inv.value
    return trace_with(alpha, g_inv, state.J)


class GradientOps(NamedTuple):
    df: np.ndarray
    dcf: np.ndarray
    grad: np.ndarray
    norm2: np.ndarray
    laplacian: np.ndarray
    laplacian0: np.ndarray


def laplacian(f: Jet, state: MetricState, metric: str = "phi") -> np.ndarray:
    """Δf = Λ(dd^c f)"""
    return trace(ddc_matrix(f.hessian(), state.J), state, metric)


def dc(df: np.ndarray, J: np.ndarray) -> np.ndarray:
    """d^c f = −df(J·)"""
    return -np.einsum("ki,...k->...i", J, df)


def gradient_ops(f: Jet, state: MetricState) -> GradientOps:
    df = f.gradient()
    g_inv = state.inverse("phi")
    grad = np.einsum("...ij,...j->...i", g_inv, df)
    return GradientOps(
        df=df,
        dcf=dc(df, state.J),
        grad=grad,
        norm2=np.einsum("...i,...i->...", df, grad),
        laplacian=laplacian(f, state, "phi"),
        laplacian0=laplacian(f, state, "0"),
    )


class CovariantHessian(NamedTuple):
    full: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


def covariant_hessian(f: Jet, state: MetricState, connection: str = "phi") -> CovariantHessian:
    """∇df split into J-invariant and J-anti-invariant parts"""
    gamma = (state.christoffel if connection == "phi" else state.christoffel0).value
    full = f.hessian() - np.einsum("...kij,...k->...ij", gamma, f.gradient())
    J = state.J
    rotated = np.einsum("ki,...kl,lj->...ij", J, full, J)
    return CovariantHessian(full=full, plus=0.5 * (full + rotated), minus=0.5 * (full - rotated))


# ---------------------------------------------------------------------------
# Frames and |∇⁰ω_φ|²
# ---------------------------------------------------------------------------

def orthonormal_frame(g: np.ndarray, J: np.ndarray, unitary: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Columns (e_1, Je_1, ..., e_n, Je_n), orthonormal for g.

    An optional n×n unitary rotates the frame: e'_k = Σ_j (Re U_jk e_j + Im U_jk Je_j).
    """
    dim = g.shape[-1]
    n = dim // 2
    cols: List[np.ndarray] = []
    for k in range(n):
        cand = np.zeros(g.shape[:-1])
        cand[..., 2 * k] = 1.0
        for c in cols:
            cand = cand - covector_inner(cand, c, g)[..., None] * c
        e = cand / np.sqrt(covector_inner(cand, cand, g))[..., None]
        cols.extend([e, np.einsum("ij,...j->...i", J, e)])
    frame = np.stack(cols, axis=-1)
    if unitary is None:
        return frame

    base_e = frame[..., 0::2]
    base_je = frame[..., 1::2]
    rotated = []
    for k in range(n):
        e = np.einsum("...ij,j->...i", base_e, unitary[:, k].real) + np.einsum("...ij,j->...i", base_je, unitary[:, k].imag)
        rotated.extend([e, np.einsum("ij,...j->...i", J, e)])
    return np.stack(rotated, axis=-1)


def nabla0_omega(state: MetricState) -> np.ndarray:
    """∇⁰_k ω_φ as an array [k, i, j]"""
    dim = state.spec.dim
    omega = state.omega.value
    d_omega = np.stack([state.omega.partial(k).value for k in range(dim)], axis=-3)
    gamma = state.christoffel0.value
    return (
        d_omega
        - np.einsum("...lki,...lj->...kij", gamma, omega)
        - np.einsum("...lkj,...il->...kij", gamma, omega)
    )


def nabla0_omega_norm(state: MetricState, unitary: Optional[np.ndarray] = None) -> np.ndarray:
    """|∇⁰ω_φ|² summed over a g₀-orthonormal frame (e_k, Je_k)"""
    frame = orthonormal_frame(state.metric("0"), state.J, unitary)
    directional = np.einsum("...ck,...cij->...kij", frame, nabla0_omega(state))
    g_inv = state.inverse("phi")
    return 0.5 * np.einsum("...kij,...ia,...jb,...kab->...", directional, g_inv, g_inv, directional)


def nabla0_omega_norm_coordinates(state: MetricState) -> np.ndarray:
    """Same quantity by a coordinate contraction with g₀^{km}"""
    nab = nabla0_omega(state)
    g_inv = state.inverse("phi")
    return 0.5 * np.einsum(
        "...km,...kij,...ia,...jb,...mab->...", state.inverse("0"), nab, g_inv, g_inv, nab
    )


# ---------------------------------------------------------------------------
# Curvature bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvatureBounds:
    A0: float
    bisectional_lower: float
    samples: int


def curvature_bounds(states: Sequence[MetricState]) -> CurvatureBounds:
    """Two-sided Ricci bound and bisectional curvature lower bound of ω₀ over sampled states"""
    A0 = 0.0
    lower = math.inf
    samples = 0
    for state in states:
        J = state.J
        ric_sym = metric_from_form(state.ric0.value, J)
        ric_sym = 0.5 * (ric_sym + np.swapaxes(ric_sym, -1, -2))
        relative = np.linalg.solve(state.metric("0"), ric_sym)
        A0 = max(A0, float(np.max(np.abs(np.linalg.eigvals(relative).real))))

        riemann = state.riemann0()
        frame = orthonormal_frame(state.metric("0"), J)
        e = frame[..., 0::2]
        je = frame[..., 1::2]
        # B(e_i, e_j) = R(e_i, Je_i, Je_j, e_j) for unit e_i, e_j
        bis = np.einsum("...abcd,...ai,...bi,...cj,...dj->...ij", riemann, e, je, je, e)
        lower = min(lower, float(np.min(bis)))
        samples += int(np.prod(state.point.shape[:-1]))
    return CurvatureBounds(A0=A0, bisectional_lower=lower, samples=samples)


# ---------------------------------------------------------------------------
# Form fields and the differentiated trace
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FormField:
    """(1,1)-form JᵀS − SJ built from a symmetric matrix S of closed-form entries"""

    symmetric: Tuple[Tuple[WeightExpr, ...], ...]

    @classmethod
    def hessian_of(cls, expr: WeightExpr, dim: int) -> "FormField":
        first = [expr.diff(i) for i in range(dim)]
        return cls(tuple(tuple(first[i].diff(j) for j in range(dim)) for i in range(dim)))

    def evaluate(self, coords: Sequence[Jet], J: np.ndarray) -> Jet:
        rows = [Jet.stack([evaluate_jet(e, coords) for e in row], axis=-1) for row in self.symmetric]
        return ddc_matrix(Jet.stack(rows, axis=-2), J)


class DiffTraceResult(NamedTuple):
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray


def _trace_along(spec: ChartSpec, phi: WeightExpr, beta: FormField, points: np.ndarray) -> np.ndarray:
    jet = jet_at(spec, phi, points, order=2)
    J = spec.J
    g = metric_from_form(ddc_matrix((jet.background + jet.perturbation).hessian(), J), J)
    b = beta.evaluate(jet.coordinates, J).value
    return trace_with(b, np.linalg.inv(g), J)


def directional_derivative(
    fn: Callable[[np.ndarray], np.ndarray],
    point: np.ndarray,
    direction: np.ndarray,
    first_step: float = 0.05,
    levels: int = 7,
) -> np.ndarray:
    """Central differences refined by one Richardson step; picks the most self-consistent level"""
    steps = first_step / 2.0 ** np.arange(levels)
    offsets = np.concatenate([steps, -steps])
    shifted = point[..., None, :] + offsets[:, None] * direction[..., None, :]
    values = fn(shifted)
    plus, minus = values[..., :levels], values[..., levels:]
    central = (plus - minus) / (2.0 * steps)
    richardson = (4.0 * central[..., 1:] - central[..., :-1]) / 3.0
    jumps = np.abs(np.diff(richardson, axis=-1))
    best = np.argmin(jumps, axis=-1)
    return np.take_along_axis(richardson, (best + 1)[..., None], axis=-1)[..., 0]


def diff_trace_check(
    spec: ChartSpec,
    phi: WeightExpr,
    point: np.ndarray,
    beta: FormField,
    direction: np.ndarray,
) -> DiffTraceResult:
    """
    Compare dΛ_φ(β)(V) with Λ_φ(∇⁰_V β) − g_φ(β, ∇⁰_V ω_φ).

    The left side is a divided difference along p + tV, the right side is
    evaluated from jets at p.
    """
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    lhs = directional_derivative(lambda q: _trace_along(spec, phi, beta, q), point, direction)

    state = state_at(spec, phi, point, order=3)
    J = spec.J
    b = beta.evaluate(state.jet.coordinates, J)
    gamma0 = state.christoffel0.value
    d_b = np.stack([b.partial(k).value for k in range(spec.dim)], axis=-3)
    b_val = b.value
    nabla_b = (
        d_b
        - np.einsum("...lki,...lj->...kij", gamma0, b_val)
        - np.einsum("...lkj,...il->...kij", gamma0, b_val)
    )
    along_b = np.einsum("...k,...kij->...ij", direction, nabla_b)
    along_omega = np.einsum("...k,...kij->...ij", direction, nabla0_omega(state))
    g_inv = state.inverse("phi")
    rhs = trace_with(along_b, g_inv, J) - form_inner(b_val, along_omega, g_inv)
    residual = np.abs(lhs - rhs) / (1.0 + np.abs(lhs))
    return DiffTraceResult(lhs=lhs, rhs=rhs, residual=residual)
