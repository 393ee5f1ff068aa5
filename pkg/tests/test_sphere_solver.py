import math

import numpy as np
import pandas as pd
import pytest

from wcsk.sphere_solver import (
    Collocation,
    NonpositiveProfileError,
    SolverError,
    SphereProfile,
    clenshaw_curtis_weights,
    compare_with_oracle,
    compute_estimates,
    differentiation_matrix,
    duistermaat_heckman_distance,
    entropy_family,
    evaluation_row,
    get_sphere_pair,
    grid_convergence,
    grid_convergence_holds,
    homotopy_pair,
    lobatto_nodes,
    reconstruct_states,
    reconstructed_residual,
    solution_from_profile,
    solve_newton,
    solve_prescribed_density,
    solve_quadrature,
    weighted_self_adjointness,
)
from wcsk.weights import ONE, Polytope, WeightPair, eval_weight, parse_weight
from wcsk.weighted_ops import scal_v
from wcsk.utils import SPHERE_ROSTER

INTERVAL = Polytope.interval(-1.0, 1.0)
SCALE = 4.0 * math.pi


def _quadratic_pair(c: float) -> WeightPair:
    """v = 1 and w₀ = c(3x² − 1), whose profile is (1 − x²)(1 − c(1 − x²)/4s)"""
    return WeightPair(ONE, parse_weight(f"(mul {c} (sub (mul 3 x0 x0) 1))"), INTERVAL, name="quadratic")


@pytest.fixture(scope="module")
def round_solution():
    return solve_newton(solve_quadrature(get_sphere_pair("round"), count=17).pair, count=17)


@pytest.fixture(scope="module")
def gaussian_quadrature():
    return solve_quadrature(get_sphere_pair("gaussian"))


def test_collocation_tools():
    nodes = lobatto_nodes(17)
    assert nodes[0] == -1.0 and nodes[-1] == pytest.approx(1.0)
    assert np.all(np.diff(nodes) > 0)
    D = differentiation_matrix(nodes)
    np.testing.assert_allclose(D @ nodes ** 3, 3.0 * nodes ** 2, atol=1e-12)
    weights = clenshaw_curtis_weights(17)
    assert weights.sum() == pytest.approx(2.0)
    assert weights @ nodes ** 4 == pytest.approx(0.4)
    assert clenshaw_curtis_weights(16) @ np.cos(lobatto_nodes(16)) == pytest.approx(2.0 * math.sin(1.0))


def test_round_profile():
    profile = SphereProfile.round()
    assert profile.boundary_defect() == pytest.approx(0.0, abs=1e-15)
    assert profile.minimum_interior() == pytest.approx(1.0)
    x = np.linspace(-1.0, 1.0, 9)
    np.testing.assert_allclose(profile.reflected()(x), profile(x), atol=1e-15)
    np.testing.assert_allclose(profile.scal_v(get_sphere_pair("round"), x), 8.0 * math.pi, rtol=1e-14)


def test_round_quadrature_adjusts_w_to_8pi():
    solution = solve_quadrature(get_sphere_pair("round"), count=33)
    assert solution.a == pytest.approx(8.0 * math.pi, abs=1e-10)
    assert solution.b == pytest.approx(0.0, abs=1e-10)
    x = np.linspace(-1.0, 1.0, 11)
    np.testing.assert_allclose(solution.profile(x), 1.0 - x * x, atol=1e-12)
    np.testing.assert_allclose(eval_weight(solution.pair.w, x[:, None], order=0).value, 8.0 * math.pi, atol=1e-10)


def test_quadrature_matches_closed_form():
    c = 10.0
    solution = solve_quadrature(_quadratic_pair(c), count=33)
    x = np.linspace(-1.0, 1.0, 21)
    expected = (1.0 - x * x) * (1.0 - c * (1.0 - x * x) / (4.0 * SCALE))
    np.testing.assert_allclose(solution.profile(x), expected, atol=1e-12)
    assert solution.profile.boundary_defect() < 1e-10
    w = eval_weight(solution.pair.w, x[:, None], order=0).value
    np.testing.assert_allclose(solution.profile.scal_v(solution.pair, x), w, atol=1e-9)


def test_quadrature_rejects_nonpositive_profile():
    with pytest.raises(NonpositiveProfileError):
        solve_quadrature(_quadratic_pair(200.0), count=33)


def test_newton_round_start_is_exact(round_solution):
    assert round_solution.converged
    assert len(round_solution.iterations) == 1
    np.testing.assert_allclose(round_solution.theta, 1.0 - round_solution.x ** 2, atol=1e-13)
    assert round_solution.area == pytest.approx(1.0)
    assert np.max(round_solution.phi) == 0.0
    assert reconstructed_residual(round_solution) < 1e-8


def test_newton_agrees_with_oracle(gaussian_quadrature):
    solution = solve_newton(gaussian_quadrature.pair, count=33)
    assert solution.converged and solution.residual <= 1e-9
    assert compare_with_oracle(solution, gaussian_quadrature.profile) < 1e-6
    assert solution.area == pytest.approx(1.0, abs=1e-10)
    frame = solution.to_frame()
    assert list(frame.columns) == ["x", "theta", "phi", "F", "mu", "Scal_v", "w"]
    np.testing.assert_allclose(frame["Scal_v"], frame["w"], atol=1e-5)


def test_newton_from_oracle_profile():
    quadrature = solve_quadrature(get_sphere_pair("exponential"))
    phi, F = solution_from_profile(quadrature.profile, quadrature.pair, count=33)
    assert np.all(np.isfinite(phi)) and np.all(np.isfinite(F))
    solution = solve_newton(quadrature.pair, init=quadrature.profile, count=33)
    assert solution.iterations[0].residual < 1e-3
    assert compare_with_oracle(solution, quadrature.profile) < 1e-6


def test_round_profile_gives_trivial_unknowns():
    phi, F = solution_from_profile(SphereProfile.round(), get_sphere_pair("round"), count=17)
    np.testing.assert_allclose(phi, 0.0, atol=1e-12)
    np.testing.assert_allclose(F, 0.0, atol=1e-12)


def test_newton_failure_carries_trace(gaussian_quadrature):
    with pytest.raises(SolverError) as info:
        solve_newton(gaussian_quadrature.pair, count=17, tolerance=1e-15, stall_tolerance=1e-15, max_iterations=1)
    assert len(info.value.trace) >= 1


def test_reconstructed_oracle_solves_weighted_cscK(gaussian_quadrature):
    x = np.linspace(-0.95, 0.95, 12)
    batches = reconstruct_states(gaussian_quadrature.profile, gaussian_quadrature.pair, x)
    assert [b.reflected for b in batches] == [False, True]
    for batch in batches:
        ctx = batch.ctx
        np.testing.assert_allclose(batch.normalized_moment(), batch.x, atol=1e-9)
        np.testing.assert_allclose(scal_v(ctx, "definition"), ctx.w, atol=1e-6)


def test_self_adjointness_on_reconstruction(gaussian_quadrature):
    f = parse_weight("(mul x0 x0)")
    h = parse_weight("(exp x0)")
    result = weighted_self_adjointness(gaussian_quadrature.profile, gaussian_quadrature.pair, f, h)
    assert result.residual < 1e-6


def test_prescribed_density():
    colloc = Collocation.build(33)
    density = 1.0 + 0.5 * colloc.nodes
    solution = solve_prescribed_density(colloc, density)
    assert solution.residual < 1e-10
    assert np.max(solution.psi) == 0.0


def test_round_estimates(round_solution):
    report = compute_estimates(round_solution)
    assert report.entropy == pytest.approx(0.0, abs=1e-12)
    assert report.weighted_entropy == pytest.approx(0.0, abs=1e-12)
    assert report.m_v == pytest.approx(1.0)
    assert report.b == pytest.approx(1.0)
    assert report.A == pytest.approx(8.0 * math.pi + 1.0)
    assert report.lp_norms[8] == pytest.approx(1.0)
    assert report.passed


def test_gaussian_estimates(gaussian_quadrature):
    report = compute_estimates(solve_newton(gaussian_quadrature.pair, count=33), p_values=(1, 2))
    assert report.weighted_entropy >= 0
    assert report.b <= report.b_bound
    assert report.lp_norms[1] == pytest.approx(1.0, abs=1e-9)
    assert report.lp_norms[2] >= report.lp_norms[1]
    assert report.checks == {"jensen": True, "b_bound": True, "entropy_comparison": True, "psi_equation": True}


def test_entropy_family():
    family = entropy_family(get_sphere_pair("affine").certify(), members=5, count=33)
    assert isinstance(family, pd.DataFrame)
    assert len(family) == 5
    assert family["comparison_holds"].all()
    assert family["Ent"].iloc[0] == pytest.approx(0.0, abs=1e-12)
    assert family["Ent"].is_monotonic_increasing
    assert np.all(np.isfinite(family["ratio"]))


def test_duistermaat_heckman_is_uniform(round_solution, gaussian_quadrature):
    assert duistermaat_heckman_distance(round_solution) < 1e-12
    assert duistermaat_heckman_distance(solve_newton(gaussian_quadrature.pair, count=33)) < 1e-8


def test_grid_convergence_table():
    table = grid_convergence(get_sphere_pair("affine"), counts=(9, 17))
    assert list(table["N"]) == [9, 17]
    assert {"iterations", "residual", "oracle_distance", "reduction", "L1", "L8"} <= set(table.columns)
    assert math.isnan(table["reduction"].iloc[0])
    assert table["oracle_distance"].iloc[1] < table["oracle_distance"].iloc[0]
    assert grid_convergence_holds(table)


def test_evaluation_row():
    nodes = lobatto_nodes(16)
    assert evaluation_row(nodes, 0.3) @ nodes ** 3 == pytest.approx(0.027, abs=1e-14)
    odd = lobatto_nodes(17)
    row = evaluation_row(odd, 0.0)
    assert row[8] == 1.0 and np.count_nonzero(row) == 1


def test_remainder_is_accurate_at_the_poles():
    k = 10.0 / (4.0 * SCALE)
    profile = solve_quadrature(_quadratic_pair(10.0), count=33).profile
    x = np.array([-1.0, -0.9999, -0.5, 0.0, 0.7, 0.9999, 1.0])
    np.testing.assert_allclose(profile.remainder()(x), k / (1.0 - k * (1.0 - x * x)), rtol=1e-8)


def test_solution_from_profile_at_full_resolution():
    quadrature = solve_quadrature(get_sphere_pair("exponential"), count=259)
    phi, F = solution_from_profile(quadrature.profile, quadrature.pair, count=129)
    assert np.all(np.isfinite(phi)) and np.all(np.isfinite(F))
    colloc = Collocation.build(129)
    x = colloc.nodes + SCALE * colloc.theta0 * (colloc.D @ phi)
    assert np.all(np.diff(x) > 0)
    assert abs(colloc.center @ x) < 1e-10
    solution = solve_newton(quadrature.pair, init=quadrature.profile, count=129)
    assert solution.iterations[0].residual < 1e-4
    assert solution.converged


def test_homotopy_pair_stays_compatible():
    pair = solve_quadrature(get_sphere_pair("exponential")).pair
    assert homotopy_pair(pair, 1.0) is pair
    halfway = solve_quadrature(homotopy_pair(pair, 0.5), count=65)
    assert halfway.a == pytest.approx(0.0, abs=1e-9)
    assert halfway.b == pytest.approx(0.0, abs=1e-9)
    assert halfway.profile.minimum_interior() > 0


@pytest.mark.parametrize("name", list(SPHERE_ROSTER))
def test_newton_solves_roster_at_full_resolution(name):
    quadrature = solve_quadrature(get_sphere_pair(name), count=259)
    solution = solve_newton(quadrature.pair, count=129)
    assert solution.converged
    assert solution.residual <= 1e-9
    assert solution.iterations[-1].homotopy == 1.0
    assert max(abs(c) for c in solution.shift) < 1e-8
    assert solution.area == pytest.approx(1.0, abs=1e-10)
    assert compare_with_oracle(solution, quadrature.profile) < 1e-6
    assert reconstructed_residual(solution) < 1e-6


def test_grid_convergence_criterion():
    halving = pd.DataFrame({"residual": [1e-2, 1e-3, 1e-5]})
    assert grid_convergence_holds(halving)
    slow = pd.DataFrame({"residual": [1e-2, 5e-3]})
    assert not grid_convergence_holds(slow)
    floor = pd.DataFrame({"residual": [1e-2, 1e-9, 2e-9]})
    assert grid_convergence_holds(floor)
    assert not grid_convergence_holds(pd.DataFrame({"residual": [1e-3]}))
    assert not grid_convergence_holds(pd.DataFrame({"residual": [1e-3, float("nan")]}))
