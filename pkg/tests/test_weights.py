import math

import numpy as np
import pytest
import sympy as sp

from wcsk.weights import (
    Coord,
    ExpressionSyntaxError,
    InvalidWeightError,
    Polytope,
    WeightDomainError,
    WeightPair,
    cone_pair,
    eval_weight,
    from_sympy,
    is_log_concave,
    parse_weight,
    soliton_weight,
)

INTERVAL = Polytope.interval(-1.0, 1.0)


def test_parse_and_evaluate():
    expr = parse_weight("(exp (neg (mul x0 x0)))")
    assert expr(0.5) == pytest.approx(math.exp(-0.25))
    assert parse_weight("(add 1 x0 x1)")(2.0, 3.0) == pytest.approx(6.0)
    assert parse_weight("(sub 2 x0)")(0.5) == pytest.approx(1.5)
    assert parse_weight("(pow (add 2 x0) -3)")(0.0) == pytest.approx(0.125)


def test_printed_form_parses_back():
    expr = parse_weight("(div (add 2 x0) (sqrt (add 3 (mul x0 x0))))")
    again = parse_weight(str(expr))
    x = np.linspace(-1.0, 1.0, 7)
    np.testing.assert_allclose(again(x), expr(x), rtol=1e-15)


@pytest.mark.parametrize("text", ["", "(add 1", "(foo 1)", "(pow x0 x1)", "x0 x1", ")", "(exp 1 2)", "y3"])
def test_malformed_expressions(text):
    with pytest.raises(ExpressionSyntaxError):
        parse_weight(text)


def test_symbolic_diff_matches_jet_gradient():
    expr = parse_weight("(mul (exp x0) (log (add 3 x1)))")
    x = np.array([[0.2, -0.4], [0.7, 0.1]])
    jet = eval_weight(expr, x, order=1)
    for a in range(2):
        np.testing.assert_allclose(expr.diff(a)(x[:, 0], x[:, 1]), jet.gradient[:, a], rtol=1e-13)


@pytest.mark.parametrize("text, derivative", [
    ("(pow x0 3)", lambda x: 3.0 * x ** 2),
    ("(div 1 x0)", lambda x: -1.0 / x ** 2),
    ("(sqrt (add 3 (mul x0 x0)))", lambda x: x / np.sqrt(3.0 + x ** 2)),
    ("(log (add 2 x0))", lambda x: 1.0 / (2.0 + x)),
])
def test_derivatives_at_negative_points(text, derivative):
    x = np.array([-0.9, -0.3, -0.05])
    np.testing.assert_allclose(parse_weight(text).diff(0)(x), derivative(x), rtol=1e-14)


def test_derivative_of_unused_coordinate_is_zero():
    expr = parse_weight("(mul (exp x0) (pow (add 2 x0) -3))")
    assert expr.diff(1) == Coord(0).diff(1)
    assert float(expr.diff(1).to_sympy()) == 0.0


def test_from_sympy_rejects_foreign_functions():
    x0 = sp.Symbol("x0")
    assert from_sympy(x0 ** 2 + 1)(3.0) == pytest.approx(10.0)
    with pytest.raises(ExpressionSyntaxError):
        from_sympy(sp.sin(x0))
    with pytest.raises(ExpressionSyntaxError):
        from_sympy(sp.Symbol("y"))

def test_eval_weight_hessian():
    v = eval_weight(parse_weight("(mul x0 x0 x1)"), np.array([1.0, 2.0]), order=2)
    assert v.value == pytest.approx(2.0)
    np.testing.assert_allclose(v.gradient, [4.0, 1.0])
    np.testing.assert_allclose(v.hessian, [[4.0, 2.0], [2.0, 0.0]])
    assert eval_weight(parse_weight("x0"), 0.3, order=0).hessian is None


def test_eval_outside_polytope_raises():
    with pytest.raises(WeightDomainError):
        eval_weight(Coord(0), 1.5, polytope=INTERVAL)
    eval_weight(Coord(0), 1.0 + 1e-12, polytope=INTERVAL)


def test_certify_rejects_nonpositive_weight():
    pair = WeightPair(parse_weight("x0"), parse_weight("1"), INTERVAL, name="linear")
    with pytest.raises(InvalidWeightError, match="nonpositive weight"):
        pair.certify()


def test_certify_bounds():
    constant = WeightPair(parse_weight("1"), parse_weight("2"), INTERVAL).certify()
    assert constant.bounds.as_tuple() == pytest.approx((1.0, 1.0, 0.0, 2.0))
    assert constant.bounds.normalized

    exponential = WeightPair(parse_weight("(exp x0)"), parse_weight("x0"), INTERVAL).certify()
    assert 0 < exponential.bounds.eta <= math.exp(-1.0)
    assert exponential.bounds.L >= math.e
    assert exponential.bounds.nu >= 1.0
    assert exponential.bounds.samples == 513
    assert not exponential.bounds.normalized


def test_log_concavity():
    assert is_log_concave(parse_weight("(exp (neg (mul x0 x0)))"), INTERVAL).log_concave
    assert is_log_concave(parse_weight("(div (add 2 x0) 3)"), INTERVAL).log_concave
    bump = is_log_concave(parse_weight("(add 1 (mul x0 x0))"), INTERVAL)
    assert not bump.log_concave
    assert bump.worst_eigenvalue == pytest.approx(2.0, rel=1e-6)
    assert not is_log_concave(parse_weight("(pow (add 2 x0) -3)"), INTERVAL).log_concave


def test_soliton_weight():
    w = soliton_weight(parse_weight("(exp x0)"), n=1, r=1)
    x = np.linspace(-1.0, 1.0, 5)
    np.testing.assert_allclose(w(x), 2.0 * np.exp(x) * (1.0 + x), rtol=1e-14)


def test_cone_pair():
    pair = cone_pair([2.0, 1.0], a=3.0, n=1, polytope=INTERVAL)
    assert pair.v(0.0) == pytest.approx(0.25)
    assert pair.w(0.0) == pytest.approx(3.0 / 8.0)


def test_pullback_reflects():
    pair = WeightPair(parse_weight("(exp x0)"), parse_weight("x0"), INTERVAL)
    reflected = pair.pullback(np.array([[-1.0]]), np.array([0.0]), INTERVAL)
    assert reflected.v(0.3) == pytest.approx(math.exp(-0.3))
    assert reflected.w(0.3) == pytest.approx(-0.3)


def test_polytope_checks():
    box = Polytope.box([-1.0, 0.0], [1.0, 2.0])
    np.testing.assert_allclose(box.lower, [-1.0, 0.0])
    np.testing.assert_allclose(box.upper, [1.0, 2.0])
    assert box.contains(np.array([0.0, 1.0]))
    assert not box.contains(np.array([0.0, 2.5]))
    with pytest.raises(ValueError, match="unbounded"):
        Polytope(np.array([[1.0]]), np.array([0.0]))
