"""Polynomial test functions on the simplex with exact derivatives.

A :class:`TestFunction` is a sparse polynomial in the ``r - 1`` free
frequencies. Derivatives are taken symbolically, so ``grad``/``hessian``/
``derivative_tensor`` are exact, and the sup-norms of the derivative tensors
that feed the error bounds are certified upper bounds.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import DomainError, simplex_grid, simplex_vertices

MAX_DEGREE = 6


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Sparse polynomial ``sum_k c_k x^k`` in ``r - 1`` variables.

    ``terms`` maps exponent tuples (length ``r - 1``) to coefficients.
    """

    __test__ = False  # keep pytest from collecting this class

    r: int
    terms: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.r < 2:
            raise DomainError("test functions need r >= 2")
        clean = {}
        for powers, coeff in dict(self.terms).items():
            powers = tuple(int(p) for p in np.atleast_1d(powers))
            if len(powers) != self.r - 1 or any(p < 0 for p in powers):
                raise DomainError(f"bad exponent {powers} for r={self.r}")
            if sum(powers) > MAX_DEGREE:
                raise DomainError(f"degree {sum(powers)} exceeds the cap {MAX_DEGREE}")
            coeff = float(coeff)
            if coeff != 0.0:
                clean[powers] = clean.get(powers, 0.0) + coeff
        object.__setattr__(self, "terms", clean)

    # construction -------------------------------------------------------

    @classmethod
    def constant(cls, r: int, c: float, name: str = "") -> "TestFunction":
        return cls(r, {(0,) * (r - 1): c}, name)

    @classmethod
    def linear(cls, r: int, gradient, c: float = 0.0, name: str = "") -> "TestFunction":
        d = r - 1
        terms = {(0,) * d: c}
        for k, g in enumerate(np.atleast_1d(gradient)):
            terms[tuple(int(j == k) for j in range(d))] = g
        return cls(r, terms, name)

    @classmethod
    def univariate(cls, coeffs, name: str = "") -> "TestFunction":
        """Scalar polynomial ``sum_k coeffs[k] x^k`` for the two-allele model."""
        return cls(2, {(k,): c for k, c in enumerate(coeffs)}, name)

    @classmethod
    def from_dict(cls, spec: dict) -> "TestFunction":
        """Parse ``{"r": r, "terms": [{"powers": [...], "coeff": c}, ...]}``."""
        terms = {}
        for t in spec["terms"]:
            key = tuple(t["powers"])
            terms[key] = terms.get(key, 0.0) + float(t["coeff"])
        return cls(int(spec["r"]), terms, spec.get("name", ""))

    def to_dict(self) -> dict:
        out = {"r": self.r, "terms": [{"powers": list(p), "coeff": c} for p, c in sorted(self.terms.items())]}
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, text: str) -> "TestFunction":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    # calculus -----------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.r - 1

    @property
    def degree(self) -> int:
        return max((sum(p) for p in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
                x = x[..., None]
            else:
                raise DomainError(f"expected {self.dim} coordinates")
        out = np.zeros(x.shape[:-1])
        for powers, c in self.terms.items():
            term = np.full(x.shape[:-1], c)
            for k, p in enumerate(powers):
                if p:
                    term = term * x[..., k] ** p
            out = out + term
        return out

    def derivative(self, multi_index) -> "TestFunction":
        """Partial derivative; ``multi_index`` counts the order in each variable."""
        multi_index = tuple(int(m) for m in multi_index)
        if len(multi_index) != self.dim:
            raise DomainError("multi-index length must be r - 1")
        terms = {}
        for powers, c in self.terms.items():
            if any(p < m for p, m in zip(powers, multi_index)):
                continue
            factor = c
            for p, m in zip(powers, multi_index):
                factor *= math.perm(p, m)
            new = tuple(p - m for p, m in zip(powers, multi_index))
            terms[new] = terms.get(new, 0.0) + factor
        return TestFunction(self.r, terms)

    def partial(self, *ks: int) -> "TestFunction":
        """Derivative along coordinates ``ks`` (0-based, repeats allowed)."""
        mi = [0] * self.dim
        for k in ks:
            mi[k] += 1
        return self.derivative(mi)

    def derivative_tensor(self, x, m: int) -> np.ndarray:
        """All m-th order partials at ``x``, shape ``batch + (d,) * m``."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        batch = x.shape[:-1] if x.shape and x.shape[-1] == d else x.shape
        out = np.zeros(batch + (d,) * m)
        cache = {}
        for ks in itertools.product(range(d), repeat=m):
            key = tuple(sorted(ks))
            if key not in cache:
                cache[key] = self.partial(*key)(x)
            out[(...,) + ks] = cache[key]
        return out

    def gradient(self, x) -> np.ndarray:
        return self.derivative_tensor(x, 1)

    def hessian(self, x) -> np.ndarray:
        return self.derivative_tensor(x, 2)

    def derivative_norm(self, x, m: int) -> np.ndarray:
        """``||nabla^m f(x)||_2``: root of the sum of squares of all m-th partials."""
        t = self.derivative_tensor(x, m)
        axes = tuple(range(t.ndim - m, t.ndim))
        return np.sqrt((t**2).sum(axis=axes))

    def __add__(self, other: "TestFunction") -> "TestFunction":
        terms = dict(self.terms)
        for p, c in other.terms.items():
            terms[p] = terms.get(p, 0.0) + c
        return TestFunction(self.r, terms)

    def __mul__(self, scalar: float) -> "TestFunction":
        return TestFunction(self.r, {p: c * scalar for p, c in self.terms.items()}, self.name)

    __rmul__ = __mul__

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"TestFunction{label}(r={self.r}, degree={self.degree}, terms={len(self.terms)})"


# --------------------------------------------------------------------------
# certified derivative sup-norms


def _abs_coefficient_bound(f: TestFunction) -> float:
    """``sum |c_k|``: bounds ``sup_I |f|`` since every monomial lies in [0, 1] on I."""
    return float(sum(abs(c) for c in f.terms.values()))


def _scalar_sup(f: TestFunction) -> float:
    """Exact ``sup_[0,1] |f|`` for a univariate polynomial via its critical points."""
    if f.is_zero():
        return 0.0
    coeffs = np.zeros(f.degree + 1)
    for (p,), c in f.terms.items():
        coeffs[p] = c
    cand = [0.0, 1.0]
    if f.degree >= 2:
        dcoef = np.polynomial.polynomial.polyder(coeffs)
        for root in np.polynomial.polynomial.polyroots(dcoef):
            if abs(root.imag) < 1e-12 and 0.0 <= root.real <= 1.0:
                cand.append(float(root.real))
    return float(np.max(np.abs(f(np.array(cand)))))


def scalar_derivative_sup(f: TestFunction, m: int) -> float:
    """``sup_[0,1] |f^(m)|`` for a univariate test function (exact)."""
    if f.r != 2:
        raise DomainError("scalar derivative norms are defined for r = 2 only")
    if m > f.degree:
        return 0.0
    return _scalar_sup(f.derivative((m,)))


def derivative_norm_sup(f: TestFunction, m: int, resolution: int = 200) -> tuple[float, float]:
    """Certified ``sup_I ||nabla^m f||_2`` as ``(value, slack)``.

    ``value + slack`` is an upper bound. The sup is exact (``slack = 0``) for
    univariate functions, when ``m >= degree - 1`` (the m-th derivative tensor
    is affine, its norm convex, so the sup sits on a vertex) and when ``m``
    exceeds the degree. Otherwise it is a grid maximum at the given
    resolution, with slack ``h sqrt(d) L`` where ``L`` is a coefficient bound
    on ``sup ||nabla^{m+1} f||_2``: every point of I lies within ``h sqrt(d)``
    of a grid point and ``L`` bounds the Lipschitz constant of the norm.
    """
    if m < 1:
        raise DomainError("derivative order must be >= 1")
    if m > f.degree:
        return 0.0, 0.0
    d = f.dim
    if d == 1:
        return scalar_derivative_sup(f, m), 0.0
    if m >= f.degree - 1:
        verts = simplex_vertices(d)
        return float(np.max(f.derivative_norm(verts, m))), 0.0
    grid = simplex_grid(d, resolution)
    value = float(np.max(f.derivative_norm(grid, m)))
    lip_sq = 0.0
    for ks in itertools.product(range(d), repeat=m + 1):
        lip_sq += _abs_coefficient_bound(f.partial(*ks)) ** 2
    slack = math.sqrt(d) / resolution * math.sqrt(lip_sq)
    return value, slack


def derivative_norms(f: TestFunction, max_order: int = 4, resolution: int = 200) -> np.ndarray:
    """Upper bounds ``value + slack`` on ``sup_I ||nabla^m f||_2`` for ``m = 1..max_order``."""
    return np.array([sum(derivative_norm_sup(f, m, resolution)) for m in range(1, max_order + 1)])


# --------------------------------------------------------------------------
# the standard families used by the gap experiments


def standard_family_r2() -> list[TestFunction]:
    """``x``, ``x^2``, ``x^3`` and a quartic mix."""
    return [
        TestFunction.univariate([0, 1], name="x"),
        TestFunction.univariate([0, 0, 1], name="x^2"),
        TestFunction.univariate([0, 0, 0, 1], name="x^3"),
        TestFunction.univariate([0, 0.5, 1, -2, 1], name="x^4-mix"),
    ]


def quadratic_r3() -> TestFunction:
    """A quadratic on the 3-allele simplex with cross terms and unequal weights."""
    return TestFunction(3, {(2, 0): 1.0, (1, 1): 1.0, (0, 2): 0.5, (1, 0): -0.25}, name="quad")
