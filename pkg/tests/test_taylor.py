import math

import numpy as np
import pytest

from wcsk import taylor
from wcsk.taylor import Jet, JetDomainError, get_basis


def _point(*values):
    return np.array([values])


def test_exp_derivatives_are_all_equal():
    basis = get_basis(1, 4)
    (x,) = Jet.variables(_point(0.3), basis)
    f = x.exp()
    for k in range(5):
        assert f.derivative_tensor(k).reshape(-1)[0] == pytest.approx(math.exp(0.3), rel=1e-14)


def test_product_hessian():
    basis = get_basis(2, 3)
    x, y = Jet.variables(_point(0.5, -1.5), basis)
    f = x * y
    np.testing.assert_allclose(f.hessian()[0], [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    np.testing.assert_allclose(f.gradient()[0], [-1.5, 0.5], atol=1e-15)


def test_reciprocal_derivatives():
    basis = get_basis(1, 5)
    (x,) = Jet.variables(_point(0.25), basis)
    f = (1.0 + x).reciprocal()
    for k in range(6):
        expected = (-1.0) ** k * math.factorial(k) / 1.25 ** (k + 1)
        assert f.derivative_tensor(k).reshape(-1)[0] == pytest.approx(expected, rel=1e-13)


def test_partial_lowers_order():
    basis = get_basis(2, 4)
    x, y = Jet.variables(_point(0.1, 0.2), basis)
    f = (x * x * y).partial(0)
    assert f.order == 3
    assert f.value[0] == pytest.approx(2 * 0.1 * 0.2)
    with pytest.raises(ValueError):
        f.derivative_tensor(4)


def test_log_of_nonpositive_raises():
    basis = get_basis(1, 2)
    (x,) = Jet.variables(_point(-0.5), basis)
    with pytest.raises(JetDomainError):
        x.log()
    with pytest.raises(JetDomainError):
        x.power(0.5)


def _matrix_jet(basis, point):
    x, y = Jet.variables(point, basis)
    three = Jet.constant(np.full(point.shape[:-1], 3.0), basis)
    row0 = Jet.stack([x + 2.0, y], axis=-1)
    row1 = Jet.stack([y, three], axis=-1)
    return Jet.stack([row0, row1], axis=-2), x, y


def test_matrix_inverse_is_exact_to_order():
    basis = get_basis(2, 4)
    A, _, _ = _matrix_jet(basis, np.array([[0.3, 0.4], [-0.2, 0.1]]))
    product = taylor.einsum("ij,jk->ik", taylor.inverse(A), A)
    expected = np.zeros_like(product.coef)
    expected[..., 0] = np.eye(2)
    np.testing.assert_allclose(product.coef, expected, atol=1e-12)


def test_logdet_matches_log_of_determinant():
    basis = get_basis(2, 4)
    A, x, y = _matrix_jet(basis, np.array([[0.3, 0.4]]))
    det = (x + 2.0) * 3.0 - y * y
    np.testing.assert_allclose(taylor.logdet(A).coef, det.log().coef, atol=1e-12)


def test_einsum_mixes_arrays_and_jets():
    basis = get_basis(2, 2)
    x, y = Jet.variables(_point(1.0, 2.0), basis)
    v = Jet.stack([x, y], axis=-1)
    M = np.array([[1.0, 2.0], [0.0, 1.0]])
    out = taylor.einsum("ij,j->i", M, v)
    np.testing.assert_allclose(out.value[0], [5.0, 2.0])
    np.testing.assert_allclose(out[..., 0].gradient()[0], [1.0, 2.0])
