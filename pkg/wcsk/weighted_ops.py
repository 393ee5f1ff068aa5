"""
Weighted operators module for the weighted cscK lab
Weighted trace, Laplacian, Ricci form and scalar curvature, the density F
and the residuals of the coupled (F, φ) system
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

try:
    from wcsk import taylor
    from wcsk.taylor import Jet
    from wcsk.weights import WeightPair, eval_weight, evaluate_jet
    from wcsk.chart import (
        MetricState, covector_inner, dc, ddc_matrix, laplacian, trace,
    )
except ImportError:
    # For direct execution
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent.parent))
    from wcsk import taylor
    from wcsk.taylor import Jet
    from wcsk.weights import WeightPair, eval_weight, evaluate_jet
    from wcsk.chart import (
        MetricState, covector_inner, dc, ddc_matrix, laplacian, trace,
    )

logger = logging.getLogger(__name__)

LAPLACIAN_VARIANTS = ("expanded", "adjoint", "trace")
SCAL_VARIANTS = ("definition", "trace")


@dataclass(frozen=True, eq=False)
class WeightedContext:
    """Metric state plus the weights evaluated at μ_φ (pair on the physical polytope)"""

    state: MetricState
    pair: WeightPair
    v_field: Jet
    log_v_field: Jet
    v: np.ndarray
    v_a: np.ndarray
    v_ab: np.ndarray
    w: np.ndarray
    xi_gram: np.ndarray

    @property
    def n(self) -> int:
        return self.state.spec.n

    @property
    def r(self) -> int:
        return self.state.spec.r

    @property
    def log_v_a(self) -> np.ndarray:
        return self.v_a / self.v[..., None]

    @property
    def log_v_ab(self) -> np.ndarray:
        return self.v_ab / self.v[..., None, None] - np.einsum("...a,...b->...ab", self.log_v_a, self.log_v_a)


def build_context(state: MetricState, pair: WeightPair) -> WeightedContext:
    """
    Evaluate the weight pair on the moment map of a metric state.

    Args:
        state: MetricState from chart.metric_state
        pair: WeightPair whose polytope is the chart's physical polytope

    Returns:
        WeightedContext

    Raises:
        WeightDomainError: μ_φ outside the pair's polytope
    """
    mu = state.mu
    components = [mu[..., a] for a in range(state.spec.r)]
    v_field = evaluate_jet(pair.v, components)
    v = eval_weight(pair.v, mu.value, order=2, polytope=pair.polytope)
    w = eval_weight(pair.w, mu.value, order=0)
    g = state.metric("phi")
    xi_gram = np.einsum("...ai,...ij,...bj->...ab", state.xi, g, state.xi)
    return WeightedContext(
        state=state,
        pair=pair,
        v_field=v_field,
        log_v_field=v_field.log(),
        v=v.value,
        v_a=v.gradient,
        v_ab=v.hessian,
        w=w.value,
        xi_gram=xi_gram,
    )


def moment_gradients(ctx: WeightedContext, which: str = "phi") -> np.ndarray:
    """dμ^a as an array (..., r, 2n)"""
    mu = ctx.state.mu if which == "phi" else ctx.state.mu0
    return mu.gradient()


def moment_laplacians(mu: Jet, state: MetricState, metric: str = "phi") -> np.ndarray:
    """Δμ^a for every component, shape (..., r)"""
    return np.stack([laplacian(mu[..., a], state, metric) for a in range(state.spec.r)], axis=-1)


def weighted_trace(alpha: np.ndarray, mu_alpha: np.ndarray, ctx: WeightedContext) -> np.ndarray:
    """Λ_{φ,v}(α) = Λ_φ(α) + (1/v) Σ v_a μ_α^a"""
    return trace(alpha, ctx.state, "phi") + np.einsum("...a,...a->...", ctx.v_a, mu_alpha) / ctx.v


def weighted_laplacian(f: Jet, ctx: WeightedContext, variant: str = "expanded") -> np.ndarray:
    """
    Δ_{φ,v} f in one of three forms.

    Args:
        f: Scalar jet with order ≥ 2
        ctx: WeightedContext
        variant: "expanded" (Δ_φf + g_φ(d log v(μ_φ), df)), "adjoint"
            (−(1/v) d*(v df) through the volume density) or "trace"
            (Λ_{φ,v}(dd^c f) with μ = d^c f(ξ))

    Returns:
        Values at the context's points
    """
    state = ctx.state
    if variant == "expanded":
        df = f.gradient()
        pairing = np.einsum("...ai,...ij,...j->...a", moment_gradients(ctx), state.inverse("phi"), df)
        return laplacian(f, state, "phi") + np.einsum("...a,...a->...", ctx.v_a, pairing) / ctx.v
    if variant == "trace":
        mu_f = np.einsum("...i,...ai->...a", dc(f.gradient(), state.J), state.xi)
        return weighted_trace(ddc_matrix(f.hessian(), state.J), mu_f, ctx)
    if variant == "adjoint":
        density = (state.logdet * 0.5).exp() * ctx.v_field
        flux = taylor.einsum("ij,j->i", state.g_inv, f.grad_jet()) * density[..., None]
        divergence = sum(flux[..., i].partial(i).value for i in range(state.spec.dim))
        return divergence / density.value
    raise ValueError(f"Unknown Laplacian variant: {variant}")


def weighted_ricci_jet(ctx: WeightedContext) -> Jet:
    """Ric_v = Ric(ω_φ) − ½ dd^c log v(μ_φ) as a jet"""
    return ctx.state.ric - ddc_matrix(ctx.log_v_field.hessian_jet(), ctx.state.J) * 0.5


def weighted_ricci(ctx: WeightedContext) -> np.ndarray:
    return weighted_ricci_jet(ctx).value


def scal(state: MetricState) -> np.ndarray:
    """Scal = 2Λ_φ(Ric)"""
    return 2.0 * trace(state.ric.value, state, "phi")


def compute_F_jet(ctx: WeightedContext) -> Jet:
    return ctx.log_v_field + ctx.state.log_volume_ratio


def compute_F(ctx: WeightedContext) -> np.ndarray:
    """F = log(v(μ_φ) ω_φⁿ/ω₀ⁿ)"""
    return ctx.log_v_field.value + ctx.state.log_volume_ratio.value


def ricci0_moment(ctx: WeightedContext) -> np.ndarray:
    """μ_{Ric(ω₀)} = −½ Δ₀μ₀"""
    return -0.5 * moment_laplacians(ctx.state.mu0, ctx.state, "0")


def scal_v(ctx: WeightedContext, variant: str = "definition") -> np.ndarray:
    """
    Weighted scalar curvature.

    "definition": v Scal − 2Δ_φ v(μ_φ) + Σ v_ab g_φ(ξ_a, ξ_b).
    "trace": 2v Λ_{φ,v}(Ric_v) with μ_{Ric_v} = −½Δ₀μ₀ − ½ d^cF(ξ).
    """
    state = ctx.state
    if variant == "definition":
        return (
            ctx.v * scal(state)
            - 2.0 * laplacian(ctx.v_field, state, "phi")
            + np.einsum("...ab,...ab->...", ctx.v_ab, ctx.xi_gram)
        )
    if variant == "trace":
        dcF = dc(compute_F_jet(ctx).gradient(), state.J)
        mu_ricv = ricci0_moment(ctx) - 0.5 * np.einsum("...i,...ai->...a", dcF, state.xi)
        return 2.0 * ctx.v * weighted_trace(weighted_ricci(ctx), mu_ricv, ctx)
    raise ValueError(f"Unknown Scal_v variant: {variant}")


class SystemResidual(NamedTuple):
    R1: np.ndarray
    R2: np.ndarray
    identity: np.ndarray


def system_residual(ctx: WeightedContext, F: Optional[Jet] = None) -> SystemResidual:
    """
    Residuals of the coupled system

        F = log(v(μ_φ) ω_φⁿ/ω₀ⁿ)
        Δ_{φ,v}F = 2Λ_{φ,v}(Ric(ω₀)) − w(μ_φ)/v(μ_φ)

    `identity` is v·R2 + Scal_v − w, which vanishes whenever R1 does.
    """
    natural = compute_F_jet(ctx)
    if F is None:
        F = natural
        R1 = np.zeros_like(ctx.v)
    else:
        R1 = F.value - natural.value
    R2 = (
        weighted_laplacian(F, ctx, "expanded")
        + ctx.w / ctx.v
        - 2.0 * weighted_trace(ctx.state.ric0.value, ricci0_moment(ctx), ctx)
    )
    identity = ctx.v * R2 + scal_v(ctx, "definition") - ctx.w
    return SystemResidual(R1=R1, R2=R2, identity=identity)


class WeightLaplacians(NamedTuple):
    lap_phi: np.ndarray
    lap_phi_expanded: np.ndarray
    lap0: np.ndarray
    lap0_expanded: np.ndarray


def weight_laplacians(ctx: WeightedContext) -> WeightLaplacians:
    """Δ_φ v(μ_φ) and Δ₀ v(μ_φ), directly and through v_a, v_ab and the moment map"""
    state = ctx.state
    dmu = moment_gradients(ctx)
    gram0 = np.einsum("...ai,...ij,...bj->...ab", dmu, state.inverse("0"), dmu)
    return WeightLaplacians(
        lap_phi=laplacian(ctx.v_field, state, "phi"),
        lap_phi_expanded=np.einsum("...a,...a->...", ctx.v_a, moment_laplacians(state.mu, state, "phi"))
        + np.einsum("...ab,...ab->...", ctx.v_ab, ctx.xi_gram),
        lap0=laplacian(ctx.v_field, state, "0"),
        lap0_expanded=np.einsum("...a,...a->...", ctx.v_a, moment_laplacians(state.mu, state, "0"))
        + np.einsum("...ab,...ab->...", ctx.v_ab, gram0),
    )


def log_v_hessian_pairing(ctx: WeightedContext) -> np.ndarray:
    """⟨Hess log v(μ_φ), g₀(dμ_φ, dμ_φ)⟩, nonpositive for log-concave v"""
    dmu = moment_gradients(ctx)
    gram0 = np.einsum("...ai,...ij,...bj->...ab", dmu, ctx.state.inverse("0"), dmu)
    return np.einsum("...ab,...ab->...", ctx.log_v_ab, gram0)


def second_order_symbol(ctx: WeightedContext, variant: str = "expanded") -> np.ndarray:
    """
    Coefficient matrix a^{ij} of the second-order part of Δ_{φ,v}.

    Probes with (u_i − p_i)(u_j − p_j), whose gradient vanishes at p, so only
    the principal part contributes.
    """
    coords = ctx.state.jet.coordinates
    point = ctx.state.point
    dim = ctx.state.spec.dim
    centered = [coords[i] - point[..., i] for i in range(dim)]
    symbol = np.zeros(point.shape[:-1] + (dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            value = 0.5 * weighted_laplacian(centered[i] * centered[j], ctx, variant)
            symbol[..., i, j] = value
            symbol[..., j, i] = value
    return symbol


def gradient_pairing(f: Jet, h: Jet, state: MetricState) -> np.ndarray:
    """g_φ(df, dh)"""
    return covector_inner(f.gradient(), h.gradient(), state.inverse("phi"))
