"""Explicit error bounds between the Wright-Fisher chain and its diffusion.

Three regimes are supported:

``"theorem"``  r >= 3; constants ``C_1..C_4`` built from ``b*``, ``u*`` and
               the covariance HS supremum, decay rates minimised over index
               tuples.
``"corollary"`` r = 2; constants ``C~_1..C~_4`` and rates
               ``m(m-1)/4N + m(u12 + u21)`` with scalar derivative norms.
``"en77"``     r = 2; the classical six-derivative bound (no horizon
               dependence).

In the first two the n-step bound is ``sum_m C_m G(lambda_m, n) ||nabla^m f||``
with the geometric factor ``G(lam, n) = (1 - e^{-n lam}) / (1 - e^{-lam})``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import DomainError, MutationMatrix, b_star, sup_covariance_hs, u_star

LAMBDA_ZERO = 1e-12


def lambda_rate(ks, U: MutationMatrix, N: int) -> float:
    """Decay rate of the ``(k_1..k_m)`` partial derivative of the semigroup.

    ``ks`` are 0-based allele indices in ``0..r-2``.
    """
    ks = list(ks)
    m = len(ks)
    if not 1 <= m <= 4:
        raise DomainError("derivative order must be 1..4")
    if any(not 0 <= k < U.r - 1 for k in ks):
        raise DomainError(f"indices must lie in 0..{U.r - 2}")
    rows = U.row_sums
    return float(sum(rows[k] + U.u[-1, k] for k in ks) + m * (m - 1) / (4 * N))


def lambda_min(m: int, U: MutationMatrix, N: int) -> float:
    """``min`` of :func:`lambda_rate` over all index tuples of length m.

    The rate is a sum of per-index terms plus a term depending on m only, so
    the minimum repeats the smallest per-index rate m times.
    """
    if not 1 <= m <= 4:
        raise DomainError("derivative order must be 1..4")
    return float(m * np.min(U.decay_rates) + m * (m - 1) / (4 * N))


def lambda_min_enumerated(m: int, U: MutationMatrix, N: int) -> float:
    """Brute-force minimum over all ``(r-1)^m`` tuples; reference for :func:`lambda_min`."""
    return min(lambda_rate(ks, U, N) for ks in itertools.product(range(U.r - 1), repeat=m))


def geometric_factor(lam: float, n: int) -> float:
    """``sum_{j<n} e^{-j lam} = (1 - e^{-n lam}) / (1 - e^{-lam})``; equals n as lam -> 0."""
    if lam < 0:
        raise DomainError("decay rate must be non-negative")
    if n < 0:
        raise DomainError("horizon must be non-negative")
    if n == 0:
        return 0.0
    if lam <= LAMBDA_ZERO:
        return float(n)
    return float(-math.expm1(-n * lam) / -math.expm1(-lam))


def constants_r3(U: MutationMatrix, N: int, *, hs_sup: float | None = None,
                 drift_sup: float | None = None) -> tuple[float, float, float, float]:
    """``(C_1, C_2, C_3, C_4)`` for ``r >= 3``.

    By default ``hs_sup`` is the closed-form covariance constant and
    ``drift_sup`` the closed-form ``b*``, which reproduces the published
    constants term for term. Passing the true suprema (for example from
    :func:`wfapprox.model.covariance_hs_sup_grid` and
    :func:`wfapprox.model.drift_norm_sup`) gives the constants the same
    derivation yields with those values substituted.
    """
    r = U.r
    if r < 3:
        raise DomainError("constants_r3 needs r >= 3; use constants_r2 for two alleles")
    if N < 1:
        raise DomainError("population size N must be >= 1")
    S = sup_covariance_hs(r) if hs_sup is None else float(hs_sup)
    bs = b_star(U)[0] if drift_sup is None else float(drift_sup)
    us = u_star(U)
    q = math.sqrt(r - 1)
    # S * sqrt(r-1) / (8N) reduces to sqrt(r-2) / (8N sqrt(r-1)) for the closed-form S
    k = S * q / (8 * N)
    c1 = 0.5 * bs * us
    c2 = (k * (2 * us + 1 / (2 * N))
          + 0.5 * bs * (bs + math.sqrt(5) / (4 * N))
          + (r - 1) * us / math.sqrt(2) * (1 / N + us))
    c3 = (k * (bs + bs / q + 3 * math.sqrt(2) / (4 * N))
          + (r - 1) ** 1.5 / 6 * (1 / (32 * N**2) + 3 * us / (8 * N) + us**3))
    c4 = S**2 * q / (32 * N**2)
    return c1, c2, c3, c4


def _check_rates(u12: float, u21: float) -> None:
    for v in (u12, u21):
        if not 0.0 <= v <= 1.0:
            raise DomainError("mutation rates must lie in [0, 1]")


def corollary_rates(u12: float, u21: float, N: int) -> tuple[float, float, float, float]:
    """``lambda~_m = m(m-1)/4N + m(u12 + u21)`` for ``m = 1..4``."""
    return tuple(m * (m - 1) / (4 * N) + m * (u12 + u21) for m in range(1, 5))


def constants_r2(u12: float, u21: float, N: int):
    """``((C~_1..C~_4), (lambda~_1..lambda~_4))`` for the two-allele model."""
    _check_rates(u12, u21)
    if N < 1:
        raise DomainError("population size N must be >= 1")
    mx = max(u12, u21)
    s = u12 + u21
    c1 = mx * s
    c2 = 1 / (64 * N**2) + s / (16 * N) + max(u12**2, u21**2) + 5 * mx / (8 * N)
    c3 = 1 / (48 * N**2) + mx / (8 * N) + max(u12**3, u21**3) / 6
    c4 = 1 / (512 * N**2)
    return (c1, c2, c3, c4), corollary_rates(u12, u21, N)


def en77_theta(mu1: float, mu2: float) -> float:
    return (1 + 4 * max(mu1, mu2)) / (1 + 2 * (mu1 + mu2))


def en77_bound(mu1: float, mu2: float, N: int, f_norms) -> float:
    """The classical two-allele bound from six scalar derivative norms.

    ``mu1`` is the rate 1 -> 2 and ``mu2`` the rate 2 -> 1; ``f_norms`` are
    ``sup|f^(j)|`` for ``j = 1..6``.
    """
    _check_rates(mu1, mu2)
    f_norms = np.asarray(f_norms, dtype=float).ravel()
    if f_norms.size != 6 or not np.all(np.isfinite(f_norms)):
        raise DomainError("en77_bound needs six finite derivative norms")
    n1, n2, n3 = f_norms[:3]
    mx = max(mu1, mu2)
    theta = en77_theta(mu1, mu2)
    first = 0.5 * (mx / 2 * n1 + theta / (16 * N) * n2 + n3 / (216 * math.sqrt(3) * N))
    second = 0.25 * (9 * max(mu1**2, mu2**2) / 2 * f_norms.sum() + 7 / (16 * N**2) * f_norms[1:].sum())
    return float(first + second)


@dataclass
class TermContribution:
    m: int
    lambda_min: float
    C: float
    factor: float
    norm: float
    contribution: float


@dataclass
class BoundReport:
    """Per-order breakdown of an n-step bound; ``total`` is the sum of contributions."""

    regime: str
    N: int
    n: int
    per_m: list = field(default_factory=list)
    total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "N": self.N,
            "n": self.n,
            "per_m": [{k: v for k, v in asdict(t).items() if k != "m"} | {"m": t.m} for t in self.per_m],
            "total": self.total,
        }


def _assemble(regime, N, n, Cs, lams, norms) -> BoundReport:
    norms = np.asarray(norms, dtype=float).ravel()
    if norms.size != 4:
        raise DomainError("need four derivative norms (m = 1..4)")
    if np.any(norms < 0) or not np.all(np.isfinite(norms)):
        raise DomainError("derivative norms must be finite and non-negative")
    terms = []
    for m in range(4):
        factor = geometric_factor(lams[m], n)
        terms.append(TermContribution(m + 1, float(lams[m]), float(Cs[m]), factor,
                                      float(norms[m]), float(Cs[m] * factor * norms[m])))
    return BoundReport(regime, N, n, terms, float(sum(t.contribution for t in terms)))


def total_bound(U: MutationMatrix, N: int, n: int, f_norms, regime: str | None = None,
                **constant_kwargs) -> BoundReport:
    """n-step bound for ``|E_x f(X(n)) - E_x f(Y(n))|``.

    ``f_norms`` are ``sup_I ||nabla^m f||_2`` for ``m = 1..4`` (scalar
    ``sup|f^(m)|`` when r = 2). The regime defaults to ``"theorem"`` for
    r >= 3 and ``"corollary"`` for r = 2.
    """
    if regime is None:
        regime = "corollary" if U.r == 2 else "theorem"
    if regime == "theorem":
        if U.r < 3:
            raise DomainError("the r >= 3 bound does not apply to two alleles")
        Cs = constants_r3(U, N, **constant_kwargs)
        lams = [lambda_min(m, U, N) for m in range(1, 5)]
    elif regime == "corollary":
        if U.r != 2:
            raise DomainError("the two-allele bound needs r = 2")
        u12, u21 = U.u[0, 1], U.u[1, 0]
        Cs, lams = constants_r2(u12, u21, N)
    else:
        raise DomainError(f"unknown regime {regime!r}")
    return _assemble(regime, N, n, Cs, lams, f_norms)


def en77_report(u12: float, u21: float, N: int, n: int, f_norms6) -> BoundReport:
    """EN77 bound wrapped as a report; the value does not depend on n."""
    total = en77_bound(u12, u21, N, f_norms6)
    return BoundReport("en77", N, n, [], total)
