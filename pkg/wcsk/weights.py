"""
Weights module for the weighted cscK lab
Moment polytope, weight expressions (v, w) with exact derivatives, bound
certification and the standard weight families
"""
import logging
import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache, reduce
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from scipy.optimize import linprog

try:
    from wcsk.taylor import Jet, JetDomainError, get_basis
    from wcsk.utils import DOMAIN_TOLERANCE, GRID_CELLS, MAX_GRID_POINTS, LOG_CONCAVITY_TOLERANCE
except ImportError:
    # For direct execution
    import sys
    from pathlib import Path
    sys.path.insert(0, str(Path(__file__).parent.parent))
    from wcsk.taylor import Jet, JetDomainError, get_basis
    from wcsk.utils import DOMAIN_TOLERANCE, GRID_CELLS, MAX_GRID_POINTS, LOG_CONCAVITY_TOLERANCE

logger = logging.getLogger(__name__)


class WeightDomainError(ValueError):
    """Point outside the moment polytope"""


class InvalidWeightError(ValueError):
    """Weight v fails positivity"""


class ExpressionSyntaxError(ValueError):
    """Malformed prefix expression"""


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------

def _is_jet(x) -> bool:
    return isinstance(x, Jet)


def _exp(x):
    return x.exp() if _is_jet(x) else np.exp(x)


def _log(x):
    if _is_jet(x):
        return x.log()
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise JetDomainError("log of a non-positive value")
    return np.log(x)


def _pow(x, p: float):
    if _is_jet(x):
        return x.power(p)
    x = np.asarray(x, dtype=float)
    if not float(p).is_integer() and np.any(x <= 0):
        raise JetDomainError(f"non-integer power {p} of a non-positive value")
    if p < 0 and np.any(x == 0):
        raise JetDomainError(f"negative power {p} of zero")
    return np.power(x, p)


class WeightExpr:
    """
    Closed-form expression over polytope (or chart) coordinates x0, x1, ...

    Evaluates on floats, numpy arrays or Jets, so one tree gives values,
    exact derivatives and compositions with other jets.
    """

    def evaluate(self, args: Sequence):
        raise NotImplementedError

    def diff(self, var: int) -> "WeightExpr":
        """Exact partial derivative in x{var}"""
        return _derivative(self, var)

    def to_sympy(self) -> sp.Expr:
        raise NotImplementedError

    def substitute(self, mapping: Sequence["WeightExpr"]) -> "WeightExpr":
        raise NotImplementedError

    def variables(self) -> frozenset:
        raise NotImplementedError

    def pullback(self, matrix, shift) -> "WeightExpr":
        """Precompose with the affine map y ↦ matrix·y + shift"""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        shift = np.atleast_1d(np.asarray(shift, dtype=float))
        mapping = []
        for i in range(matrix.shape[0]):
            term: WeightExpr = Const(float(shift[i]))
            for j in range(matrix.shape[1]):
                if matrix[i, j] != 0.0:
                    term = add(term, mul(Const(float(matrix[i, j])), Coord(j)))
            mapping.append(term)
        return self.substitute(mapping)

    def __call__(self, *args):
        return self.evaluate(args)

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, float(exponent))


@dataclass(frozen=True)
class Const(WeightExpr):
    value: float

    def evaluate(self, args):
        return self.value

    def to_sympy(self):
        value = float(self.value)
        return sp.Integer(int(value)) if value.is_integer() else sp.Float(value)

    def substitute(self, mapping):
        return self

    def variables(self):
        return frozenset()

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Coord(WeightExpr):
    index: int

    def evaluate(self, args):
        return args[self.index]

    def to_sympy(self):
        return _symbol(self.index)

    def substitute(self, mapping):
        return mapping[self.index]

    def variables(self):
        return frozenset({self.index})

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class Add(WeightExpr):
    left: WeightExpr
    right: WeightExpr

    def evaluate(self, args):
        return self.left.evaluate(args) + self.right.evaluate(args)

    def to_sympy(self):
        return self.left.to_sympy() + self.right.to_sympy()

    def substitute(self, mapping):
        return add(self.left.substitute(mapping), self.right.substitute(mapping))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"(add {self.left} {self.right})"


@dataclass(frozen=True)
class Mul(WeightExpr):
    left: WeightExpr
    right: WeightExpr

    def evaluate(self, args):
        left = self.left.evaluate(args)
        right = self.right.evaluate(args)
        if not _is_jet(left) and _is_jet(right):
            return right * left
        return left * right

    def to_sympy(self):
        return self.left.to_sympy() * self.right.to_sympy()

    def substitute(self, mapping):
        return mul(self.left.substitute(mapping), self.right.substitute(mapping))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"(mul {self.left} {self.right})"


@dataclass(frozen=True)
class Div(WeightExpr):
    num: WeightExpr
    den: WeightExpr

    def evaluate(self, args):
        num = self.num.evaluate(args)
        den = self.den.evaluate(args)
        if _is_jet(den):
            return den.reciprocal() * num
        den = np.asarray(den, dtype=float)
        if np.any(den == 0):
            raise JetDomainError("division by zero")
        return num / den

    def to_sympy(self):
        return self.num.to_sympy() / self.den.to_sympy()

    def substitute(self, mapping):
        return div(self.num.substitute(mapping), self.den.substitute(mapping))

    def variables(self):
        return self.num.variables() | self.den.variables()

    def __str__(self):
        return f"(div {self.num} {self.den})"


@dataclass(frozen=True)
class Exp(WeightExpr):
    arg: WeightExpr

    def evaluate(self, args):
        return _exp(self.arg.evaluate(args))

    def to_sympy(self):
        return sp.exp(self.arg.to_sympy())

    def substitute(self, mapping):
        return exp(self.arg.substitute(mapping))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"(exp {self.arg})"


@dataclass(frozen=True)
class Log(WeightExpr):
    arg: WeightExpr

    def evaluate(self, args):
        return _log(self.arg.evaluate(args))

    def to_sympy(self):
        return sp.log(self.arg.to_sympy())

    def substitute(self, mapping):
        return log(self.arg.substitute(mapping))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"(log {self.arg})"


@dataclass(frozen=True)
class Pow(WeightExpr):
    base: WeightExpr
    exponent: float

    def evaluate(self, args):
        return _pow(self.base.evaluate(args), self.exponent)

    def to_sympy(self):
        return self.base.to_sympy() ** Const(self.exponent).to_sympy()

    def substitute(self, mapping):
        return power(self.base.substitute(mapping), self.exponent)

    def variables(self):
        return self.base.variables()

    def __str__(self):
        return f"(pow {self.base} {float(self.exponent)!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(x: Union[WeightExpr, float, int]) -> WeightExpr:
    return x if isinstance(x, WeightExpr) else Const(float(x))


def add(a: WeightExpr, b: WeightExpr) -> WeightExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return Add(a, b)


def mul(a: WeightExpr, b: WeightExpr) -> WeightExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return Mul(a, b)


def neg(a: WeightExpr) -> WeightExpr:
    return mul(Const(-1.0), a)


def div(a: WeightExpr, b: WeightExpr) -> WeightExpr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Div(a, b)


def exp(a: WeightExpr) -> WeightExpr:
    if isinstance(a, Const):
        return Const(math.exp(a.value))
    return Exp(a)


def log(a: WeightExpr) -> WeightExpr:
    if isinstance(a, Const) and a.value > 0:
        return Const(math.log(a.value))
    return Log(a)


def power(a: WeightExpr, exponent: float) -> WeightExpr:
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return a
    if isinstance(a, Const) and (a.value > 0 or float(exponent).is_integer()):
        return Const(float(a.value) ** exponent)
    return Pow(a, float(exponent))


def coordinates(count: int) -> List[WeightExpr]:
    return [Coord(i) for i in range(count)]


@lru_cache(maxsize=64)
def _symbol(index: int) -> sp.Symbol:
    return sp.Symbol(f"x{index}")


def from_sympy(expr: sp.Expr) -> WeightExpr:
    """Rebuild a weight expression from a sympy tree over the symbols x0, x1, ..."""
    if expr.is_number:
        try:
            value = float(expr)
        except TypeError as e:
            raise ExpressionSyntaxError(f"non-real constant {expr}") from e
        if not math.isfinite(value):
            raise ExpressionSyntaxError(f"non-finite constant {expr}")
        return Const(value)
    if isinstance(expr, sp.Symbol):
        match = _COORD.match(expr.name)
        if match is None:
            raise ExpressionSyntaxError(f"unknown symbol {expr.name!r}")
        return Coord(int(match.group(1)))
    if isinstance(expr, sp.Add):
        return reduce(add, map(from_sympy, expr.args))
    if isinstance(expr, sp.Mul):
        return reduce(mul, map(from_sympy, expr.args))
    if isinstance(expr, sp.Pow):
        base, exponent = expr.args
        if exponent.is_number:
            return power(from_sympy(base), float(exponent))
        return exp(mul(from_sympy(exponent), log(from_sympy(base))))
    if isinstance(expr, sp.exp):
        return exp(from_sympy(expr.args[0]))
    if isinstance(expr, sp.log):
        return log(from_sympy(expr.args[0]))
    raise ExpressionSyntaxError(f"no weight expression for {expr}")


@lru_cache(maxsize=1024)
def _derivative(expr: WeightExpr, var: int) -> WeightExpr:
    return from_sympy(sp.diff(expr.to_sympy(), _symbol(var)))


# ---------------------------------------------------------------------------
# Prefix-notation parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_COORD = re.compile(r"^x(\d+)$")
_NAMED_CONSTANTS = {"pi": math.pi, "e": math.e}


def parse_weight(text: str) -> WeightExpr:
    """
    Parse a prefix expression such as `(exp (neg (mul x0 x0)))`.

    Operators: add, sub, mul, div, neg, exp, log, pow, sqrt. Atoms: numbers,
    pi, e and coordinates x0, x1, ...
    """
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ExpressionSyntaxError("Empty weight expression")
    expr, pos = _parse(tokens, 0)
    if pos != len(tokens):
        raise ExpressionSyntaxError(f"Trailing tokens in expression: {' '.join(tokens[pos:])}")
    return expr


def _parse(tokens: List[str], pos: int) -> Tuple[WeightExpr, int]:
    if pos >= len(tokens):
        raise ExpressionSyntaxError("Unexpected end of expression")
    token = tokens[pos]
    if token == ")":
        raise ExpressionSyntaxError("Unexpected ')'")
    if token != "(":
        return _atom(token), pos + 1

    if pos + 1 >= len(tokens):
        raise ExpressionSyntaxError("Unexpected end of expression")
    op = tokens[pos + 1]
    pos += 2
    args: List[WeightExpr] = []
    while pos < len(tokens) and tokens[pos] != ")":
        arg, pos = _parse(tokens, pos)
        args.append(arg)
    if pos >= len(tokens):
        raise ExpressionSyntaxError("Missing ')'")
    return _apply(op, args), pos + 1


def _atom(token: str) -> WeightExpr:
    match = _COORD.match(token)
    if match:
        return Coord(int(match.group(1)))
    if token in _NAMED_CONSTANTS:
        return Const(_NAMED_CONSTANTS[token])
    try:
        return Const(float(token))
    except ValueError:
        raise ExpressionSyntaxError(f"Unknown atom: {token}")


def _apply(op: str, args: List[WeightExpr]) -> WeightExpr:
    def arity(*allowed):
        if len(args) not in allowed:
            raise ExpressionSyntaxError(f"'{op}' takes {allowed} arguments, got {len(args)}")

    if op == "add":
        arity(*range(1, 64))
        result = args[0]
        for a in args[1:]:
            result = Add(result, a)
        return result
    if op == "mul":
        arity(*range(1, 64))
        result = args[0]
        for a in args[1:]:
            result = Mul(result, a)
        return result
    if op == "sub":
        arity(1, 2)
        return neg(args[0]) if len(args) == 1 else Add(args[0], neg(args[1]))
    if op == "neg":
        arity(1)
        return Mul(Const(-1.0), args[0])
    if op == "div":
        arity(2)
        return Div(args[0], args[1])
    if op == "exp":
        arity(1)
        return Exp(args[0])
    if op == "log":
        arity(1)
        return Log(args[0])
    if op == "sqrt":
        arity(1)
        return Pow(args[0], 0.5)
    if op == "pow":
        arity(2)
        if args[1].variables():
            raise ExpressionSyntaxError("pow exponent must be constant")
        return Pow(args[0], float(args[1].evaluate(())))
    raise ExpressionSyntaxError(f"Unknown operator: {op}")


# ---------------------------------------------------------------------------
# Polytope
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Polytope:
    """Intersection of half-spaces ⟨ℓ_i, x⟩ + c_i ≥ 0"""

    normals: np.ndarray
    offsets: np.ndarray
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError("Polytope needs one offset per half-space")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

        r = normals.shape[1]
        lower, upper = np.zeros(r), np.zeros(r)
        for k in range(r):
            for sign, target in ((1.0, lower), (-1.0, upper)):
                cost = np.zeros(r)
                cost[k] = sign
                res = linprog(cost, A_ub=-normals, b_ub=offsets, bounds=[(None, None)] * r, method="highs")
                if res.status == 2:
                    raise ValueError("Polytope is empty")
                if res.status == 3:
                    raise ValueError("Polytope is unbounded")
                target[k] = res.x[k]
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Polytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        r = lower.shape[0]
        eye = np.eye(r)
        return cls(np.vstack([eye, -eye]), np.concatenate([-lower, upper]))

    @classmethod
    def interval(cls, a: float, b: float) -> "Polytope":
        return cls.box([a], [b])

    @property
    def dimension(self) -> int:
        return self.normals.shape[1]

    def slack(self, x: np.ndarray) -> np.ndarray:
        """Smallest half-space value at each point (negative outside)"""
        x = np.asarray(x, dtype=float)
        return (x @ self.normals.T + self.offsets).min(axis=-1)

    def contains(self, x: np.ndarray, tol: float = DOMAIN_TOLERANCE) -> np.ndarray:
        return self.slack(x) >= -tol

    def check(self, x: np.ndarray, tol: float = DOMAIN_TOLERANCE):
        x = np.asarray(x, dtype=float)
        if not np.all(self.contains(x, tol)):
            flat = x.reshape(-1, self.dimension)
            worst = flat[np.argmin(self.slack(flat))]
            raise WeightDomainError(f"Point {worst} lies outside the moment polytope")

    def grid(self, cells: int = GRID_CELLS, max_points: int = MAX_GRID_POINTS) -> np.ndarray:
        """Tensor grid over the bounding box, restricted to P"""
        r = self.dimension
        per_axis = cells + 1
        if per_axis ** r > max_points:
            per_axis = max(2, int(math.floor(max_points ** (1.0 / r))))
        axes = [np.linspace(self.lower[k], self.upper[k], per_axis) for k in range(r)]
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, r)
        return points[self.contains(points)]

    def spacing(self, cells: int = GRID_CELLS, max_points: int = MAX_GRID_POINTS) -> np.ndarray:
        r = self.dimension
        per_axis = cells + 1
        if per_axis ** r > max_points:
            per_axis = max(2, int(math.floor(max_points ** (1.0 / r))))
        return (self.upper - self.lower) / (per_axis - 1)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class WeightValue(NamedTuple):
    value: np.ndarray
    gradient: Optional[np.ndarray]
    hessian: Optional[np.ndarray]


def evaluate_jet(expr: WeightExpr, coords: Sequence[Jet]) -> Jet:
    """Evaluate on jets, promoting constant results to jets of the right shape"""
    out = expr.evaluate(coords)
    if isinstance(out, Jet):
        return out
    ref = coords[0]
    return Jet.constant(np.broadcast_to(np.asarray(out, dtype=float), ref.shape), ref.basis)


def eval_weight(
    expr: WeightExpr,
    x: Union[float, np.ndarray],
    order: int = 2,
    polytope: Optional[Polytope] = None,
    dimension: Optional[int] = None,
) -> WeightValue:
    """
    Evaluate a weight and its exact derivatives.

    Args:
        expr: Weight expression over polytope coordinates
        x: Point(s), shape (..., r); a bare float is read as r = 1
        order: 0, 1 or 2
        polytope: If given, points are checked against P
        dimension: Number of coordinates when x is a bare float

    Returns:
        WeightValue with gradient/hessian set to None below their order
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1) if dimension in (None, 1) else np.full(dimension, float(x))
    if polytope is not None:
        polytope.check(x)

    basis = get_basis(x.shape[-1], order)
    out = evaluate_jet(expr, Jet.variables(x, basis))
    return WeightValue(
        value=out.value,
        gradient=out.gradient() if order >= 1 else None,
        hessian=out.hessian() if order >= 2 else None,
    )


# ---------------------------------------------------------------------------
# Weight pairs and bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightBounds:
    eta: float
    L: float
    nu: float
    M: float
    v_slope: float
    w_slope: float
    margin: float
    samples: int

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.eta, self.L, self.nu, self.M)

    @property
    def normalized(self) -> bool:
        """Whether sup v ≤ 1 ≤ L holds as the entropy-lemma display writes it"""
        return self.L <= 1.0 + 1e-12


@dataclass(frozen=True, eq=False)
class WeightPair:
    v: WeightExpr
    w: WeightExpr
    polytope: Polytope
    name: str = "weights"
    bounds: Optional[WeightBounds] = None

    def certify(self, cells: int = GRID_CELLS) -> "WeightPair":
        return replace(self, bounds=certify_bounds(self, cells=cells))

    def pullback(self, matrix, shift, polytope: Polytope) -> "WeightPair":
        """Weights on `polytope` obtained by precomposing with y ↦ matrix·y + shift"""
        return WeightPair(
            v=self.v.pullback(matrix, shift),
            w=self.w.pullback(matrix, shift),
            polytope=polytope,
            name=self.name,
            bounds=self.bounds,
        )

    def with_w(self, w: WeightExpr) -> "WeightPair":
        return replace(self, w=w, bounds=None)


def certify_bounds(pair: WeightPair, cells: int = GRID_CELLS, max_points: int = MAX_GRID_POINTS) -> WeightBounds:
    """
    Certify η ≤ v ≤ L and −ν ≤ w ≤ M on a dense grid of P.

    Args:
        pair: Weight pair
        cells: Grid cells per axis
        max_points: Cap on the number of grid points

    Returns:
        WeightBounds inflated by a first-order Lipschitz margin
    """
    P = pair.polytope
    points = P.grid(cells, max_points)
    radius = 0.5 * float(np.linalg.norm(P.spacing(cells, max_points)))

    v = eval_weight(pair.v, points, order=2)
    w = eval_weight(pair.w, points, order=2)
    if not np.all(np.isfinite(v.value)) or np.any(v.value <= 0):
        bad = points[np.argmin(np.where(np.isfinite(v.value), v.value, -np.inf))]
        raise InvalidWeightError(f"nonpositive weight v at x = {bad.tolist()} for '{pair.name}'")

    v_slope = float(np.max(np.linalg.norm(v.gradient, axis=-1)))
    w_slope = float(np.max(np.linalg.norm(w.gradient, axis=-1)))
    v_curv = float(np.max(np.abs(v.hessian))) * P.dimension
    w_curv = float(np.max(np.abs(w.hessian))) * P.dimension

    v_margin = v_slope * radius
    w_margin = w_slope * radius
    v_min = float(np.min(v.value))
    eta = v_min - v_margin
    if eta <= 0:
        logger.warning("Lipschitz margin exceeds min v for '%s'; using half the sampled minimum", pair.name)
        eta = 0.5 * v_min

    bounds = WeightBounds(
        eta=eta,
        L=float(np.max(v.value)) + v_margin,
        nu=max(0.0, -float(np.min(w.value)) + w_margin),
        M=float(np.max(w.value)) + w_margin,
        v_slope=v_slope + v_curv * radius,
        w_slope=w_slope + w_curv * radius,
        margin=max(v_margin, w_margin),
        samples=int(points.shape[0]),
    )
    if not bounds.normalized:
        logger.info("'%s': sup v = %.6g exceeds 1, bounds are reported unnormalized", pair.name, bounds.L)
    return bounds


class LogConcavity(NamedTuple):
    log_concave: bool
    worst_eigenvalue: float
    worst_point: np.ndarray


def is_log_concave(
    v: WeightExpr,
    polytope: Polytope,
    cells: int = GRID_CELLS,
    tol: float = LOG_CONCAVITY_TOLERANCE,
) -> LogConcavity:
    """Decide concavity of log v from the largest Hessian eigenvalue over the grid"""
    points = polytope.grid(cells)
    hess = eval_weight(Log(v), points, order=2).hessian
    top = np.linalg.eigvalsh(hess)[..., -1]
    k = int(np.argmax(top))
    return LogConcavity(bool(top[k] <= tol), float(top[k]), points[k])


# ---------------------------------------------------------------------------
# Weight families
# ---------------------------------------------------------------------------

def affine(coefficients: Sequence[float]) -> WeightExpr:
    """c0 + c1·x0 + c2·x1 + ..."""
    expr: WeightExpr = Const(float(coefficients[0]))
    for a, c in enumerate(coefficients[1:]):
        expr = add(expr, mul(Const(float(c)), Coord(a)))
    return expr


def polynomial(coefficients: Dict[Tuple[int, ...], float]) -> WeightExpr:
    """Σ c_α x^α from a dict of exponent tuples"""
    expr: WeightExpr = ZERO
    for alpha, c in sorted(coefficients.items()):
        term: WeightExpr = Const(float(c))
        for a, k in enumerate(alpha):
            term = mul(term, power(Coord(a), float(k)))
        expr = add(expr, term)
    return expr


def soliton_weight(v: WeightExpr, n: int, r: int) -> WeightExpr:
    """w = 2v(n + ⟨d log v, x⟩)"""
    pairing: WeightExpr = Const(float(n))
    for a in range(r):
        pairing = add(pairing, mul(Coord(a), div(v.diff(a), v)))
    return mul(mul(Const(2.0), v), pairing)


def classical_pair(c: float, polytope: Polytope) -> WeightPair:
    return WeightPair(ONE, Const(float(c)), polytope, name="classical")


def extremal_pair(coefficients: Sequence[float], polytope: Polytope) -> WeightPair:
    return WeightPair(ONE, affine(coefficients), polytope, name="extremal")


def soliton_pair(v: WeightExpr, n: int, polytope: Polytope) -> WeightPair:
    return WeightPair(v, soliton_weight(v, n, polytope.dimension), polytope, name="soliton")


def fibration_pair(
    v_coefficients: Dict[Tuple[int, ...], float],
    w_coefficients: Dict[Tuple[int, ...], float],
    polytope: Polytope,
) -> WeightPair:
    return WeightPair(polynomial(v_coefficients), polynomial(w_coefficients), polytope, name="fibration")


def cone_pair(ell: Sequence[float], a: float, n: int, polytope: Polytope) -> WeightPair:
    """v = ℓ^{−n−1}, w = a·ℓ^{−n−2} for a positive affine ℓ"""
    linear = affine(ell)
    return WeightPair(
        power(linear, -(n + 1.0)),
        mul(Const(float(a)), power(linear, -(n + 2.0))),
        polytope,
        name="cone",
    )
