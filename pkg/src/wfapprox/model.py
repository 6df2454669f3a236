"""Closed-form quantities of the neutral r-allele Wright-Fisher model.

Points of the frequency simplex are plain float arrays of length ``r - 1``
(the last frequency is implied); leading axes are treated as batch axes
throughout, so every function here accepts a single point or a stack of them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside the model's domain."""


@dataclass(frozen=True, eq=False)
class MutationMatrix:
    """Per-generation mutation probabilities ``u[i, j]`` from allele i to j.

    The neutral model requires a zero diagonal and that the rate *into*
    allele ``i < r`` does not depend on the source allele, so the matrix is
    pinned down by its last row plus the outflow column into allele ``r``.
    Use :meth:`from_rates` to build it from those free parameters, or
    :meth:`from_matrix` to validate a full matrix.
    """

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        _validate_matrix(u)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_rates(cls, last_row, outflow) -> "MutationMatrix":
        """Build from ``(u_r1, ..., u_r,r-1)`` and ``(u_1r, ..., u_r-1,r)``."""
        last_row = np.asarray(last_row, dtype=float).ravel()
        outflow = np.asarray(outflow, dtype=float).ravel()
        if last_row.shape != outflow.shape or last_row.size < 1:
            raise DomainError("last_row and outflow must both have length r - 1")
        r = last_row.size + 1
        u = np.zeros((r, r))
        u[:, : r - 1] = last_row
        u[np.arange(r - 1), np.arange(r - 1)] = 0.0
        u[: r - 1, r - 1] = outflow
        return cls(u)

    @classmethod
    def from_matrix(cls, u) -> "MutationMatrix":
        return cls(np.asarray(u, dtype=float))

    @classmethod
    def two_allele(cls, u12: float, u21: float) -> "MutationMatrix":
        return cls.from_rates([u21], [u12])

    @classmethod
    def zero(cls, r: int) -> "MutationMatrix":
        if r < 2:
            raise DomainError("need at least two alleles")
        return cls(np.zeros((r, r)))

    @classmethod
    def random(cls, r: int, rng: np.random.Generator, max_rate: float = 0.1) -> "MutationMatrix":
        """Rates drawn uniformly from ``[0, max_rate)``; valid whenever ``max_rate * r <= 1``."""
        if max_rate * r > 1:
            raise DomainError("max_rate too large: row sums could exceed 1")
        return cls.from_rates(rng.uniform(0, max_rate, r - 1), rng.uniform(0, max_rate, r - 1))

    @property
    def r(self) -> int:
        return self.u.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        """Total outflow ``sum_j u_ij`` for every allele (length r)."""
        return self.u.sum(axis=1)

    @property
    def last_row(self) -> np.ndarray:
        return self.u[-1, :-1].copy()

    @property
    def outflow(self) -> np.ndarray:
        return self.u[:-1, -1].copy()

    @property
    def decay_rates(self) -> np.ndarray:
        """``sum_j u_kj + u_rk`` for ``k = 1..r-1``; the slope of ``-b_k`` in ``x_k``."""
        return self.row_sums[:-1] + self.u[-1, :-1]

    def scaled(self, factor: float) -> "MutationMatrix":
        return MutationMatrix(self.u * factor)

    def __eq__(self, other):
        return isinstance(other, MutationMatrix) and np.array_equal(self.u, other.u)

    def __hash__(self):
        return hash(self.u.tobytes())

    def __repr__(self):
        return f"MutationMatrix(r={self.r}, last_row={self.last_row.tolist()}, outflow={self.outflow.tolist()})"


def _validate_matrix(u: np.ndarray) -> None:
    if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape[0] < 2:
        raise DomainError(f"mutation matrix must be square with r >= 2, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise DomainError("mutation rates must be finite")
    if np.any(u < 0) or np.any(u > 1):
        raise DomainError("mutation rates must lie in [0, 1]")
    if np.any(np.diag(u) != 0):
        raise DomainError("diagonal mutation rates u_ii must be zero")
    r = u.shape[0]
    for i in range(r - 1):
        col = np.delete(u[:, i], i)
        if np.any(np.abs(col - u[r - 1, i]) > 1e-15):
            raise DomainError(
                f"rate into allele {i + 1} must not depend on the source allele "
                f"(column {i + 1} off-diagonal entries differ from u_r{i + 1})"
            )
    sums = u.sum(axis=1)
    if np.any(sums > 1 + SIMPLEX_TOL):
        raise DomainError(f"row sums of the mutation matrix must not exceed 1, got {sums.max()}")


# --------------------------------------------------------------------------
# simplex geometry


def as_simplex_point(x, r: int | None = None) -> np.ndarray:
    """Validate (and clamp within ``SIMPLEX_TOL``) a point or stack of points of I."""
    x = np.array(x, dtype=float, ndmin=1)
    if r is not None and x.shape[-1] != r - 1:
        raise DomainError(f"expected {r - 1} coordinates, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise DomainError("simplex coordinates must be finite")
    if np.any(x < -SIMPLEX_TOL):
        raise DomainError(f"negative frequency {x.min()} outside tolerance")
    s = x.sum(axis=-1)
    if np.any(s > 1 + SIMPLEX_TOL):
        raise DomainError(f"frequencies sum to {s.max()} > 1")
    x = np.clip(x, 0.0, 1.0)
    over = x.sum(axis=-1, keepdims=True)
    return np.divide(x, over, out=x.copy(), where=over > 1.0)


def full_frequencies(x: np.ndarray) -> np.ndarray:
    """Append the implied last frequency ``x_r = 1 - sum(x)``."""
    rest = 1.0 - x.sum(axis=-1, keepdims=True)
    return np.concatenate([x, rest], axis=-1)


@dataclass(frozen=True)
class LatticeState:
    """Allele counts ``alpha_1..alpha_{r-1}`` in a population of ``2N`` genes."""

    alpha: tuple
    N: int

    def __post_init__(self):
        alpha = tuple(int(a) for a in np.atleast_1d(self.alpha))
        object.__setattr__(self, "alpha", alpha)
        if int(self.N) < 1:
            raise DomainError("population size N must be >= 1")
        if any(a < 0 for a in alpha) or sum(alpha) > 2 * self.N:
            raise DomainError(f"counts {alpha} are not a state of I_2N with 2N={2 * self.N}")

    @property
    def r(self) -> int:
        return len(self.alpha) + 1

    @property
    def point(self) -> np.ndarray:
        return np.array(self.alpha, dtype=float) / (2 * self.N)

    @classmethod
    def from_point(cls, x, N: int) -> "LatticeState":
        return cls(tuple(lattice_counts(x, N)), N)


def lattice_counts(x, N: int) -> np.ndarray:
    """Integer counts ``2N x`` for a lattice point; raises if x is off the lattice."""
    x = as_simplex_point(x)
    scaled = x * (2 * N)
    counts = np.rint(scaled)
    if np.any(np.abs(scaled - counts) > 1e-9):
        raise DomainError(f"point {x.tolist()} is not on the lattice I_2N with 2N={2 * N}")
    return counts.astype(np.int64)


def lattice_states(N: int, r: int) -> np.ndarray:
    """All count vectors of I_2N, colexicographic in ``(alpha_1, ..., alpha_{r-1})``.

    Returns an integer array of shape ``(S, r - 1)`` with
    ``S = C(2N + r - 1, r - 1)``.
    """
    n, d = 2 * N, r - 1
    out = []

    def rec(prefix_rev, remaining, slots):
        # prefix_rev holds the trailing coordinates, most significant first
        if slots == 0:
            out.append(prefix_rev[::-1])
            return
        for a in range(remaining + 1):
            rec(prefix_rev + (a,), remaining - a, slots - 1)

    rec((), n, d)
    return np.array(out, dtype=np.int64).reshape(-1, d)


def num_lattice_states(N: int, r: int) -> int:
    return math.comb(2 * N + r - 1, r - 1)


def simplex_grid(d: int, M: int) -> np.ndarray:
    """All points ``k / M`` of the d-dimensional simplex with integer k, shape (K, d)."""
    pts = [p for p in itertools.product(range(M + 1), repeat=d) if sum(p) <= M]
    return np.array(pts, dtype=float).reshape(-1, d) / M


def simplex_vertices(d: int) -> np.ndarray:
    return np.vstack([np.zeros(d), np.eye(d)])


# --------------------------------------------------------------------------
# drift, covariance, moments


def adjusted_frequencies(y, U: MutationMatrix) -> np.ndarray:
    """Frequencies after one round of mutation, ``y#``."""
    y = as_simplex_point(y, U.r)
    yf = full_frequencies(y)
    adj = yf * (1.0 - U.row_sums) + yf @ U.u
    return adj[..., :-1]


def drift(x, U: MutationMatrix) -> np.ndarray:
    """Per-generation drift ``b_i(x) = -x_i sum_j u_ij + sum_j x_j u_ji``."""
    x = as_simplex_point(x, U.r)
    xf = full_frequencies(x)
    b = -xf * U.row_sums + xf @ U.u
    return b[..., :-1]


def covariance(x) -> np.ndarray:
    """Multinomial covariance shape ``a_ij = x_i (delta_ij - x_j)``."""
    x = as_simplex_point(x)
    eye = np.eye(x.shape[-1])
    return x[..., :, None] * eye - x[..., :, None] * x[..., None, :]


def sup_covariance_hs(r: int) -> float:
    """Closed-form ``sqrt(r-2)/(r-1)``, the value of ``||A(y)||_HS`` at the barycentre.

    This is the value used by the r >= 3 bound constants. It is attained at
    ``y_i = 1/(r-1)``; for ``r >= 4`` the supremum of ``||A||_HS`` over I is in
    fact larger (see :func:`covariance_hs_sup_grid`).
    """
    if r < 3:
        raise DomainError("sup ||A||_HS closed form needs r >= 3; for r = 2 use sup|A| = 1/4")
    return math.sqrt(r - 2) / (r - 1)


def covariance_hs_sup_grid(r: int, resolution: int = 200) -> tuple[float, np.ndarray]:
    """Grid maximum of ``||A(y)||_HS`` over I and its maximiser."""
    y = simplex_grid(r - 1, resolution)
    s2 = (y**2).sum(axis=1)
    hs2 = s2 - 2 * (y**3).sum(axis=1) + s2**2
    k = int(np.argmax(hs2))
    return float(np.sqrt(hs2[k])), y[k]


def b_star(U: MutationMatrix) -> tuple[float, int]:
    """Closed-form drift constant ``b*`` and the index ``i*`` (0-based).

    ``i*`` maximises ``sum_j u_ij + u_ri`` (smallest index on ties) and
    ``b* = [(sum_j u_i*j)^2 + sum_{i != i*} u_ri^2]^(1/2)``, the drift norm at
    the vertex ``e_i*``. It coincides with ``sup_I ||b||`` whenever that vertex
    is the maximising one; :func:`drift_norm_sup` gives the exact supremum.
    """
    rates = U.decay_rates
    i_star = int(np.argmax(rates))
    last = U.u[-1, :-1]
    others = np.delete(last, i_star)
    value = math.sqrt(U.row_sums[i_star] ** 2 + float(np.sum(others**2)))
    return value, i_star


def drift_norm_sup(U: MutationMatrix) -> tuple[float, np.ndarray]:
    """Exact ``sup_I ||b(y)||`` with its maximising vertex.

    ``||b||^2`` is a convex function of y, so the supremum over the simplex is
    attained at one of its r vertices.
    """
    verts = simplex_vertices(U.r - 1)
    norms = np.linalg.norm(drift(verts, U), axis=-1)
    k = int(np.argmax(norms))
    return float(norms[k]), verts[k]


def u_star(U: MutationMatrix) -> float:
    """``max_k (sum_j u_kj + u_rk)`` over ``k = 1..r-1``."""
    return float(np.max(U.decay_rates))


def one_step_moments(y, U: MutationMatrix, N: int):
    """Exact one-step moments of the chain from a lattice point ``y``.

    Returns ``(mean_shift, A_hat, third_diag)``: the mean of ``Y(1) - y``
    (equal to ``b(y)``), the raw second moment matrix
    ``E[(Y(1) - y)(Y(1) - y)^T]`` and the diagonal third moments
    ``E[(Y_i(1) - y_i)^3]``.
    """
    lattice_counts(y, N)
    y = as_simplex_point(y, U.r)
    p = adjusted_frequencies(y, U)
    d = p - y
    n2 = 2.0 * N
    A_hat = d[..., :, None] * d[..., None, :] - p[..., :, None] * p[..., None, :] / n2
    diag = d**2 + p * (1 - p) / n2
    idx = np.arange(p.shape[-1])
    A_hat[..., idx, idx] = diag
    third = p * (1 - 2 * p) * (1 - p) / n2**2 + 3 * p * (1 - p) * d / n2 + d**3
    return drift(y, U), A_hat, third


def face_normal(face: int, r: int) -> np.ndarray:
    """``nu^i_j = delta_ij - delta_ir`` for faces ``0..r-1`` (face r-1 is ``sum x = 1``)."""
    if not 0 <= face < r:
        raise DomainError(f"face index must be in 0..{r - 1}")
    if face == r - 1:
        return -np.ones(r - 1)
    return np.eye(r - 1)[face]


def boundary_conditions_check(x, face: int, U: MutationMatrix, N: int) -> tuple[float, float]:
    """Normal diffusion and normal drift of the generator on a face of I.

    Faces ``0..r-2`` are ``{x_i = 0}``; face ``r-1`` is ``{sum x = 1}``.
    Returns ``(<nu, A(x)/2N nu>, <nu, b(x)>)``; the first vanishes and the
    second is non-negative on every face.
    """
    x = as_simplex_point(x, U.r)
    if x.ndim != 1:
        raise DomainError("boundary check takes a single point")
    if face == U.r - 1:
        off = abs(x.sum() - 1.0)
    elif 0 <= face < U.r - 1:
        off = abs(x[face])
    else:
        raise DomainError(f"face index must be in 0..{U.r - 1}")
    if off > SIMPLEX_TOL:
        raise DomainError(f"point {x.tolist()} is not on face {face}")
    nu = face_normal(face, U.r)
    diffusion_normal = float(nu @ (covariance(x) / (2 * N)) @ nu)
    drift_normal = float(nu @ drift(x, U))
    return diffusion_normal, drift_normal
