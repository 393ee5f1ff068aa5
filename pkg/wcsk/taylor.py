"""
Truncated multivariate Taylor arithmetic
A Jet carries the Taylor polynomial of a quantity around a base point, so every
derivative of a composite expression comes out exactly up to the jet order
"""
import math
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np


class JetDomainError(ValueError):
    """Raised when a jet operation leaves the domain of the underlying function"""


class MonomialBasis:
    """
    Monomials x^α with |α| ≤ order in `dim` variables, graded by degree.

    Coefficients stored against this basis are f^(α)(p) / α!, so products of
    jets are plain polynomial products truncated at `order`.
    """

    def __init__(self, dim: int, order: int):
        self.dim = dim
        self.order = order

        exponents: List[Tuple[int, ...]] = []
        for degree in range(order + 1):
            for combo in combinations_with_replacement(range(dim), degree):
                alpha = [0] * dim
                for var in combo:
                    alpha[var] += 1
                exponents.append(tuple(alpha))

        self.exponents = np.array(exponents, dtype=int).reshape(len(exponents), dim)
        self.degrees = self.exponents.sum(axis=1)
        self.size = len(exponents)
        self.index: Dict[Tuple[int, ...], int] = {alpha: k for k, alpha in enumerate(exponents)}
        self.factorials = np.array(
            [math.prod(math.factorial(a) for a in alpha) for alpha in exponents], dtype=float
        )

        lhs, rhs, dest = [], [], []
        for i, alpha in enumerate(exponents):
            for j, beta in enumerate(exponents):
                if self.degrees[i] + self.degrees[j] <= order:
                    lhs.append(i)
                    rhs.append(j)
                    dest.append(self.index[tuple(a + b for a, b in zip(alpha, beta))])
        self.lhs = np.array(lhs, dtype=int)
        self.rhs = np.array(rhs, dtype=int)
        self.scatter = np.zeros((len(dest), self.size))
        self.scatter[np.arange(len(dest)), dest] = 1.0

        self.partial_maps = []
        for var in range(dim):
            src, dst, factor = [], [], []
            for k, alpha in enumerate(exponents):
                if alpha[var] > 0:
                    lowered = list(alpha)
                    lowered[var] -= 1
                    src.append(k)
                    dst.append(self.index[tuple(lowered)])
                    factor.append(float(alpha[var]))
            self.partial_maps.append(
                (np.array(src, dtype=int), np.array(dst, dtype=int), np.array(factor))
            )

        self.unit = np.array(
            [self.index[tuple(1 if k == var else 0 for k in range(dim))] for var in range(dim)]
            if order >= 1 else [], dtype=int
        )

    def tensor_index(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Monomial index and α! factor for every entry of the order-k derivative tensor"""
        shape = (self.dim,) * k
        idx = np.zeros(shape, dtype=int)
        fac = np.zeros(shape)
        for entry in np.ndindex(*shape):
            alpha = [0] * self.dim
            for var in entry:
                alpha[var] += 1
            pos = self.index[tuple(alpha)]
            idx[entry] = pos
            fac[entry] = self.factorials[pos]
        return idx, fac


@lru_cache(maxsize=None)
def get_basis(dim: int, order: int) -> MonomialBasis:
    """Cached monomial basis"""
    return MonomialBasis(dim, order)


Scalar = Union[float, np.ndarray]


class Jet:
    """
    Batched truncated Taylor polynomial.

    `coef` has shape (*batch, *tensor, basis.size); leading axes broadcast like
    numpy arrays. `order` is the highest degree that is still exact: it drops
    by one with every partial derivative.
    """

    __array_ufunc__ = None

    def __init__(self, coef: np.ndarray, basis: MonomialBasis, order: int = None):
        self.coef = np.asarray(coef, dtype=float)
        self.basis = basis
        self.order = basis.order if order is None else order

    # -- construction -----------------------------------------------------

    @classmethod
    def constant(cls, value: Scalar, basis: MonomialBasis) -> "Jet":
        value = np.asarray(value, dtype=float)
        coef = np.zeros(value.shape + (basis.size,))
        coef[..., 0] = value
        return cls(coef, basis)

    @classmethod
    def variables(cls, point: np.ndarray, basis: MonomialBasis) -> List["Jet"]:
        """One jet per coordinate of `point` (shape (..., dim)), seeded with unit slope"""
        point = np.asarray(point, dtype=float)
        if point.shape[-1] != basis.dim:
            raise ValueError(f"Point has {point.shape[-1]} coordinates, basis expects {basis.dim}")
        out = []
        for var in range(basis.dim):
            coef = np.zeros(point.shape[:-1] + (basis.size,))
            coef[..., 0] = point[..., var]
            if basis.order >= 1:
                coef[..., basis.unit[var]] = 1.0
            out.append(cls(coef, basis))
        return out

    @staticmethod
    def stack(jets: Sequence["Jet"], axis: int = 0) -> "Jet":
        """Stack jets along a new tensor axis (axis counts from the left of the coefficient array)"""
        basis = jets[0].basis
        order = min(j.order for j in jets)
        coefs = np.broadcast_arrays(*[j.coef for j in jets])
        if axis < 0:
            axis -= 1
        return Jet(np.stack(coefs, axis=axis), basis, order)

    # -- views ------------------------------------------------------------

    @property
    def value(self) -> np.ndarray:
        return self.coef[..., 0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.coef.shape[:-1]

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.coef[key + (slice(None),)], self.basis, self.order)

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, dim={self.basis.dim}, order={self.order})"

    def gradient(self) -> np.ndarray:
        if self.order < 1:
            raise ValueError("Jet order too low for a gradient")
        return self.coef[..., self.basis.unit]

    def hessian(self) -> np.ndarray:
        return self.derivative_tensor(2)

    def derivative_tensor(self, k: int) -> np.ndarray:
        if k > self.order:
            raise ValueError(f"Jet of order {self.order} has no order-{k} derivatives")
        if k == 0:
            return self.value
        idx, fac = self.basis.tensor_index(k)
        return self.coef[..., idx] * fac

    def partial(self, var: int) -> "Jet":
        if self.order < 1:
            raise ValueError("Cannot differentiate an order-0 jet")
        src, dst, factor = self.basis.partial_maps[var]
        coef = np.zeros_like(self.coef)
        coef[..., dst] = self.coef[..., src] * factor
        return Jet(self._truncate(coef, self.order - 1), self.basis, self.order - 1)

    def grad_jet(self) -> "Jet":
        """Gradient as a jet with a trailing tensor axis of length dim"""
        return Jet.stack([self.partial(i) for i in range(self.basis.dim)], axis=-1)

    def hessian_jet(self) -> "Jet":
        first = [self.partial(i) for i in range(self.basis.dim)]
        rows = [Jet.stack([d.partial(j) for j in range(self.basis.dim)], axis=-1) for d in first]
        return Jet.stack(rows, axis=-2)

    def truncated(self, order: int) -> "Jet":
        order = min(order, self.order)
        return Jet(self._truncate(self.coef, order), self.basis, order)

    def _truncate(self, coef: np.ndarray, order: int) -> np.ndarray:
        if order >= self.basis.order:
            return coef
        return coef * (self.basis.degrees <= order)

    # -- arithmetic -------------------------------------------------------

    def _constant_like(self, other) -> np.ndarray:
        return np.asarray(other, dtype=float)

    def __add__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(self.coef + other.coef, self.basis, min(self.order, other.order))
        const = self._constant_like(other)
        shape = np.broadcast_shapes(self.coef.shape, const.shape + (1,))
        coef = np.broadcast_to(self.coef, shape).copy()
        coef[..., 0] += const
        return Jet(coef, self.basis, self.order)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.coef, self.basis, self.order)

    def __sub__(self, other) -> "Jet":
        return self + (-other)

    def __rsub__(self, other) -> "Jet":
        return (-self) + other

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            order = min(self.order, other.order)
            b = self.basis
            coef = (self.coef[..., b.lhs] * other.coef[..., b.rhs]) @ b.scatter
            return Jet(self._truncate(coef, order), b, order)
        const = self._constant_like(other)
        return Jet(self.coef * const[..., None], self.basis, self.order)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / self._constant_like(other))

    def __rtruediv__(self, other) -> "Jet":
        return self.reciprocal() * other

    def __pow__(self, exponent) -> "Jet":
        return self.power(float(exponent))

    def _compose(self, coeffs: List[np.ndarray]) -> "Jet":
        """Σ c_m N^m with N = self − value, evaluated by Horner's rule"""
        nil_coef = self.coef.copy()
        nil_coef[..., 0] = 0.0
        nil = Jet(nil_coef, self.basis, self.order)
        result = Jet.constant(coeffs[-1] * np.ones(self.shape), self.basis)
        for c in reversed(coeffs[:-1]):
            result = result * nil + c
        return result.truncated(self.order)

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self._compose([e / math.factorial(m) for m in range(self.order + 1)])

    def log(self) -> "Jet":
        a = self.value
        if np.any(a <= 0):
            raise JetDomainError("log of a non-positive value")
        coeffs = [np.log(a)]
        for m in range(1, self.order + 1):
            coeffs.append((-1.0) ** (m + 1) / (m * a ** m))
        return self._compose(coeffs)

    def power(self, p: float) -> "Jet":
        a = self.value
        integral = float(p).is_integer()
        if not integral and np.any(a <= 0):
            raise JetDomainError(f"non-integer power {p} of a non-positive value")
        if integral and p < 0 and np.any(a == 0):
            raise JetDomainError(f"negative power {p} of zero")
        coeffs = []
        falling = 1.0
        for m in range(self.order + 1):
            if integral and p >= 0 and m > p:
                coeffs.append(np.zeros_like(a))
                continue
            coeffs.append(falling / math.factorial(m) * a ** (p - m))
            falling *= p - m
        return self._compose(coeffs)

    def reciprocal(self) -> "Jet":
        return self.power(-1.0)

    def sqrt(self) -> "Jet":
        return self.power(0.5)


def _split_subscripts(subscripts: str) -> Tuple[str, str, str]:
    inputs, output = subscripts.replace(" ", "").split("->")
    left, right = inputs.split(",")
    return left, right, output


def einsum(subscripts: str, a, b):
    """
    Two-operand einsum over the tensor axes of jets or plain arrays.

    Subscripts refer to tensor axes only, e.g. "ij,jk->ik"; batch axes are
    broadcast in front and the coefficient axis is handled here.
    """
    left, right, output = _split_subscripts(subscripts)
    a_jet, b_jet = isinstance(a, Jet), isinstance(b, Jet)
    if not a_jet and not b_jet:
        return np.einsum(f"...{left},...{right}->...{output}", a, b)
    if a_jet and b_jet:
        basis = a.basis
        order = min(a.order, b.order)
        coef = np.einsum(
            f"...{left}Z,...{right}Z->...{output}Z",
            a.coef[..., basis.lhs], b.coef[..., basis.rhs],
        ) @ basis.scatter
        return Jet(a._truncate(coef, order), basis, order)
    if a_jet:
        coef = np.einsum(f"...{left}Z,...{right}->...{output}Z", a.coef, np.asarray(b, dtype=float))
        return Jet(coef, a.basis, a.order)
    coef = np.einsum(f"...{left},...{right}Z->...{output}Z", np.asarray(a, dtype=float), b.coef)
    return Jet(coef, b.basis, b.order)


def trace(a):
    """Trace over the last two tensor axes"""
    if isinstance(a, Jet):
        return Jet(np.einsum("...iiZ->...Z", a.coef), a.basis, a.order)
    return np.einsum("...ii->...", a)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Jet) else np.asarray(x, dtype=float)


def inverse(a: Jet) -> Jet:
    """Matrix inverse via the Neumann series around the base value"""
    base_inv = np.linalg.inv(a.value)
    nil = a - a.value
    step = -einsum("ij,jk->ik", base_inv, nil)
    term = Jet.constant(base_inv, a.basis)
    result = term
    for _ in range(a.order):
        term = einsum("ij,jk->ik", step, term)
        result = result + term
    return result.truncated(a.order)


def logdet(a: Jet) -> Jet:
    """log det of a jet of matrices with positive determinant"""
    sign, base = np.linalg.slogdet(a.value)
    if np.any(sign <= 0):
        raise JetDomainError("log det of a matrix with non-positive determinant")
    base_inv = np.linalg.inv(a.value)
    step = einsum("ij,jk->ik", base_inv, a - a.value)
    power = step
    result = Jet.constant(base, a.basis)
    for m in range(1, a.order + 1):
        result = result + trace(power) * ((-1.0) ** (m + 1) / m)
        power = einsum("ij,jk->ik", power, step)
    return result.truncated(a.order)
