import math

import numpy as np
import pytest

from wcsk.chart import (
    DegenerateMetricError,
    FormField,
    complex_structure,
    covariant_hessian,
    curvature_bounds,
    diff_trace_check,
    exterior_derivative_residual,
    flat_chart,
    get_chart,
    laplacian,
    nabla0_omega_norm,
    nabla0_omega_norm_coordinates,
    orthonormal_frame,
    product_chart,
    relative_eigenvalues,
    sphere_chart,
    sphere_moment,
    state_at,
    trace,
)
from wcsk.taylor import Jet, get_basis
from wcsk.weights import ZERO, Const, parse_weight
from wcsk.weighted_ops import scal


def test_complex_structure_squares_to_minus_identity():
    J = complex_structure(3)
    np.testing.assert_allclose(J @ J, -np.eye(6))


def test_round_sphere_scalar_curvature(disk_points):
    state = state_at(sphere_chart(), ZERO, disk_points)
    np.testing.assert_allclose(scal(state), 8.0 * math.pi, rtol=1e-10)


def test_sphere_moment_map_is_normalized(disk_points):
    spec = sphere_chart()
    state = state_at(spec, ZERO, disk_points)
    r2 = np.sum(disk_points ** 2, axis=-1)
    np.testing.assert_allclose(spec.normalize(state.mu0.value)[..., 0], (r2 - 1.0) / (r2 + 1.0), atol=1e-13)
    origin = state_at(spec, ZERO, np.zeros((1, 2)))
    assert origin.mu0.value[0, 0] == pytest.approx(-1.0 / (4.0 * math.pi))


def test_flat_background_conventions():
    spec = flat_chart()
    points = np.array([[0.3, -0.2], [1.0, 0.5]])
    state = state_at(spec, ZERO, points)
    np.testing.assert_allclose(state.metric("0"), np.broadcast_to(np.eye(2), (2, 2, 2)), atol=1e-14)
    basis = get_basis(2, 4)
    x, y = Jet.variables(points, basis)
    np.testing.assert_allclose(laplacian(x * x + y * y, state, "0"), 4.0, rtol=1e-13)


def test_trace_product_on_curves(disk_points, small_potential):
    state = state_at(sphere_chart(), small_potential, disk_points)
    product = trace(state.omega.value, state, "0") * trace(state.omega0.value, state, "phi")
    np.testing.assert_allclose(product, 1.0, atol=1e-10)


def test_degenerate_metric_raises():
    spec = flat_chart()
    collapse = Const(-0.25) * parse_weight("(add (mul x0 x0) (mul x1 x1))")
    with pytest.raises(DegenerateMetricError):
        state_at(spec, collapse, np.array([[0.1, 0.2]]))


def test_relative_eigenvalues_of_background(disk_points):
    np.testing.assert_allclose(relative_eigenvalues(sphere_chart(), ZERO, disk_points), 1.0, rtol=1e-12)


def test_kahler_form_is_closed(rng):
    spec = product_chart()
    phi = Const(0.05 / (8.0 * math.pi)) * sphere_moment(0) * sphere_moment(1)
    state = state_at(spec, phi, spec.sample_points(rng, 6))
    assert np.max(exterior_derivative_residual(state.omega)) < 1e-10


def test_frame_is_orthonormal(rng, disk_points, small_potential):
    state = state_at(sphere_chart(), small_potential, disk_points)
    g = state.metric("phi")
    frame = orthonormal_frame(g, state.J)
    gram = np.einsum("...ia,...ij,...jb->...ab", frame, g, frame)
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-12)


def test_nabla0_omega_norm_frame_independent(rng):
    spec = product_chart()
    phi = Const(0.1 / (8.0 * math.pi)) * (sphere_moment(0) + sphere_moment(0) * sphere_moment(1))
    state = state_at(spec, phi, spec.sample_points(rng, 5))
    frame_value = nabla0_omega_norm(state)
    np.testing.assert_allclose(frame_value, nabla0_omega_norm_coordinates(state), rtol=1e-9, atol=1e-12)
    assert np.all(frame_value >= 0)


def test_round_sphere_ricci_bound(disk_points):
    bounds = curvature_bounds([state_at(sphere_chart(), ZERO, disk_points)])
    assert bounds.A0 == pytest.approx(4.0 * math.pi, rel=1e-9)
    assert bounds.samples == len(disk_points)


def test_differentiated_trace(disk_points, small_potential):
    spec = sphere_chart()
    beta = FormField.hessian_of(parse_weight("(mul x0 x0 x1)"), spec.dim)
    direction = np.tile([0.6, 0.8], (len(disk_points), 1))
    result = diff_trace_check(spec, small_potential, disk_points, beta, direction)
    assert np.max(result.residual) < 1e-6


def test_unknown_chart_family():
    with pytest.raises(ValueError, match="Unknown chart family"):
        get_chart("torus")


def test_covariant_hessian_splits_by_complex_structure():
    points = np.array([[0.3, -0.2], [1.0, 0.5]])
    state = state_at(flat_chart(), ZERO, points)
    x, y = state.jet.coordinates
    radial = covariant_hessian(x * x + y * y, state, "0")
    np.testing.assert_allclose(radial.full, np.broadcast_to(2.0 * np.eye(2), (2, 2, 2)), atol=1e-13)
    np.testing.assert_allclose(radial.minus, 0.0, atol=1e-13)
    saddle = covariant_hessian(x * x - y * y, state, "0")
    np.testing.assert_allclose(saddle.plus, 0.0, atol=1e-13)
    np.testing.assert_allclose(saddle.minus, np.broadcast_to(np.diag([2.0, -2.0]), (2, 2, 2)), atol=1e-13)


def test_moment_map_hessian_is_j_invariant(disk_points, small_potential):
    state = state_at(sphere_chart(), small_potential, disk_points)
    for moment, connection in ((state.mu0, "0"), (state.mu, "phi")):
        hess = covariant_hessian(moment[..., 0], state, connection)
        np.testing.assert_allclose(hess.plus + hess.minus, hess.full, atol=1e-14)
        np.testing.assert_allclose(hess.minus, 0.0, atol=1e-10)
        assert np.max(np.abs(hess.plus)) > 1e-3
