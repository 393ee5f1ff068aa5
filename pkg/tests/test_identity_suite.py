import json
import math

import numpy as np
import pandas as pd
import pytest

from wcsk.identity_suite import (
    PotentialRejectedError,
    SamplePlan,
    default_roster,
    fit_constant,
    random_potential,
    run_battery,
    run_identity,
    run_inequality_audit,
    sample_block,
    trace_verdict,
)
from wcsk.chart import relative_eigenvalues
from wcsk.identity_suite import positivity_points
from wcsk.weights import ZERO
from wcsk.utils import IDENTITY_CHECKS, INEQUALITY_SLACK, JET_ORDER

# Identities evaluated once per weight pair; the rest once per metric state
PER_PAIR = {
    "scal_v_forms", "system_residual", "laplacian_forms", "laplacian_trace", "weight_laplacians",
    "ricci_v_closed", "leibniz", "ellipticity",
}


def test_default_roster_is_certified():
    roster = default_roster()
    assert [p.name for p in roster][:2] == ["constant", "exponential"]
    assert all(p.bounds is not None for p in roster)
    assert roster[-1].polytope.dimension == 2


def test_rank_two_weight_skipped_on_rank_one_chart():
    plan = SamplePlan(chart="sphere", roster=default_roster(["constant", "gaussian2"]))
    assert [p.name for p in plan.pairs] == ["constant"]
    assert len(SamplePlan(chart="product", roster=plan.roster).pairs) == 2


def test_random_potential_is_admissible_and_reproducible(small_plan):
    first = random_potential(small_plan, 1)
    again = random_potential(SamplePlan(chart="sphere", potentials=2, points=8, seed=7, roster=small_plan.roster), 1)
    np.testing.assert_array_equal(first.coefficients, again.coefficients)
    assert first.amplitude == small_plan.amplitudes[1]
    assert np.min(relative_eigenvalues(small_plan.spec, first.expr, positivity_points(small_plan.spec))) >= small_plan.delta


def test_zero_amplitude_gives_background(roster):
    plan = SamplePlan(amplitudes=(0.0,), roster=roster)
    potential = random_potential(plan, 0)
    assert potential.expr == ZERO
    assert potential.tries == 0


def test_oversized_amplitude_is_rejected(roster):
    plan = SamplePlan(amplitudes=(1e4,), max_tries=3, roster=roster)
    with pytest.raises(PotentialRejectedError) as info:
        random_potential(plan, 0)
    assert info.value.tries == 3


def test_rejected_potential_is_recorded_not_raised(roster):
    plan = SamplePlan(amplitudes=(1e4,), max_tries=2, potentials=1, points=4, roster=roster)
    block = sample_block(plan, 0)
    assert block.rejected is not None
    assert block.skipped == 4
    entry = run_identity("moment_map", plan)
    assert not entry.passed
    assert entry.details["rejected_potentials"] == 1


@pytest.mark.parametrize("check_id", [c for c in IDENTITY_CHECKS if c != "self_adjointness"])
def test_identities_hold_on_sphere(small_plan, check_id):
    entry = run_identity(check_id, small_plan)
    assert entry.passed, entry.to_dict()
    per_point = len(small_plan.pairs) if check_id in PER_PAIR else 1
    assert entry.samples + entry.skipped * per_point == small_plan.potentials * small_plan.points * per_point
    assert entry.value <= entry.tolerance


def test_identities_thread_independent(small_plan):
    serial = run_identity("weight_laplacians", small_plan, threads=1)
    threaded = run_identity("weight_laplacians", small_plan, threads=2)
    assert serial.value == threaded.value
    assert serial.worst_point == threaded.worst_point


def test_self_adjointness_only_on_sphere(small_plan, roster):
    entry = run_identity("self_adjointness", small_plan)
    assert entry.passed
    assert entry.samples == len(small_plan.pairs)
    skipped = run_identity("self_adjointness", SamplePlan(chart="product", roster=roster))
    assert skipped.passed and "skipped_reason" in skipped.details


def test_unknown_checks_raise(small_plan):
    with pytest.raises(ValueError):
        run_identity("nonexistent", small_plan)
    with pytest.raises(ValueError):
        run_inequality_audit("nonexistent", small_plan)


def test_trace_inequalities_and_product(small_plan):
    entry = run_inequality_audit("trace_inequalities", small_plan)
    assert entry.passed
    assert entry.samples > 0
    assert entry.details["product_defect"] < 1e-10


def test_log_concavity_sign_with_control(small_plan):
    entry = run_inequality_audit("log_concavity_sign", small_plan)
    assert entry.passed
    assert set(entry.details["log_concave"]) == {"constant", "exponential", "gaussian"}
    assert entry.details["controls"]["bump"] > 1e-3


def test_fit_constant_stability():
    table = pd.DataFrame({"C": [0.5, 1.0, 1.5, 1.9], "first_half": [True, True, False, False],
                          "potential": 0, "sample": range(4), "pair": "p", "point": [[0.0]] * 4})
    fit = fit_constant(table, "C")
    assert fit.value == 1.9 and fit.half == 1.0
    assert fit.stable
    assert fit.worst["sample"] == 3

    runaway = table.assign(C=[0.1, 0.2, 0.3, 5.0])
    assert not fit_constant(runaway, "C").stable

    negative = table.assign(C=[-1.0, -2.0, -0.5, -0.1])
    assert fit_constant(negative, "C").value == 0.0
    assert fit_constant(pd.DataFrame(), "C").stable is False


def test_battery_report_is_deterministic(roster):
    def report():
        plan = SamplePlan(chart="sphere", potentials=1, points=6, seed=3, roster=roster)
        return run_battery(plan, identities=["moment_map", "moment_map", "leibniz"], audits=["log_concavity_sign"])

    first, second = report(), report()
    assert [e.name for e in first.entries] == ["moment_map", "leibniz", "log_concavity_sign"]
    assert json.dumps(first.to_dict(), sort_keys=True) == json.dumps(second.to_dict(), sort_keys=True)
    assert first.passed and first.failed() == []


@pytest.mark.parametrize("chart", ["product", "product_partial"])
def test_identities_hold_on_product_families(roster, chart):
    plan = SamplePlan(chart=chart, potentials=1, points=6, seed=11, roster=roster)
    report = run_battery(
        plan,
        identities=["scal_v_forms", "laplacian_forms", "moment_map", "kahler_closed", "frame_independence"],
        audits=[],
    )
    assert report.chart == chart
    for entry in report.entries:
        assert entry.passed, entry.to_dict()
        assert entry.samples > 0


def test_ricci_trace_bound_fit(small_plan):
    entry = run_inequality_audit("ricci_trace_bound", small_plan)
    assert entry.kind == "inequality"
    assert entry.samples == 2 * small_plan.points * small_plan.potentials * len(small_plan.pairs) - entry.skipped * len(small_plan.pairs)
    assert np.isfinite(entry.value) and entry.value >= 0.0
    assert entry.details["A0"] > 0
    assert entry.details["fitted_on_first_half"] <= entry.value


@pytest.mark.parametrize("check_id", ["yau_inequality", "cgp_inequality"])
def test_second_order_fits_use_log_concave_pairs(small_plan, check_id):
    entry = run_inequality_audit(check_id, small_plan)
    assert entry.details["log_concave"] == ["constant", "exponential", "gaussian"]
    assert entry.details["non_log_concave"] == ["bump"]
    assert np.isfinite(entry.value) and entry.value >= 0.0
    assert entry.worst_point["label"] in entry.details["log_concave"]


def test_c2_audit_respects_trace_floor(small_plan):
    entry = run_inequality_audit("c2_inequality", small_plan)
    assert np.isfinite(entry.value)
    assert entry.details["K"] == small_plan.K
    assert entry.details["floor_gap"] <= 1e-9
    assert entry.details["sup_abs_F"] >= 0.0


def test_sample_blocks_live_on_their_plan(roster):
    plan = SamplePlan(potentials=1, points=4, roster=roster)
    assert plan.blocks == {}
    block = sample_block(plan, 0)
    assert sample_block(plan, 0) is block
    assert list(plan.blocks) == [(0, JET_ORDER, 4)]
    assert SamplePlan(potentials=1, points=4, roster=roster).blocks == {}
    assert positivity_points.cache_info().maxsize == 8


def test_trace_verdict_uses_absolute_slack():
    table = pd.DataFrame({"violation": [-1.0, 2e-9], "product": [1.0, 1.0]})
    value, _, passed = trace_verdict(table, 2)
    assert value == 2e-9 and not passed
    table["violation"] = [-1.0, 0.5 * INEQUALITY_SLACK]
    assert trace_verdict(table, 2)[2]


def test_trace_verdict_checks_product_in_dimension_one():
    table = pd.DataFrame({"violation": [-1.0, -0.5], "product": [1.0, 1.0 + 1e-6]})
    _, details, passed = trace_verdict(table, 1)
    assert not passed
    assert math.isclose(details["product_defect"], 1e-6, rel_tol=1e-6)
    _, details, passed = trace_verdict(table, 2)
    assert passed and details == {}
