"""The discrete Wright-Fisher chain: exact laws, pushforward and sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .model import (
    DomainError,
    LatticeState,
    MutationMatrix,
    adjusted_frequencies,
    full_frequencies,
    lattice_counts,
    lattice_states,
    num_lattice_states,
)

DEFAULT_STATE_CAP = 200_000
_DENSE_LIMIT = 4000


class CapacityError(RuntimeError):
    """The exact state space is too large; use Monte Carlo instead."""


@lru_cache(maxsize=64)
def _log_factorials(n: int) -> np.ndarray:
    return gammaln(np.arange(n + 1) + 1.0)


@lru_cache(maxsize=32)
def _states(N: int, r: int) -> np.ndarray:
    s = lattice_states(N, r)
    s.setflags(write=False)
    return s


def state_index(alpha, N: int, r: int) -> int:
    """Position of a count vector in the colexicographic enumeration."""
    alpha = tuple(int(a) for a in alpha)
    idx = _index_map(N, r).get(alpha)
    if idx is None:
        raise DomainError(f"{alpha} is not a state of I_2N with 2N={2 * N}")
    return idx


@lru_cache(maxsize=32)
def _index_map(N: int, r: int) -> dict:
    return {tuple(s): i for i, s in enumerate(_states(N, r).tolist())}


def _to_alpha(state, N: int | None) -> tuple[np.ndarray, int]:
    if isinstance(state, LatticeState):
        return np.array(state.alpha, dtype=np.int64), state.N
    if N is None:
        raise DomainError("population size N is required for raw count vectors")
    alpha = np.atleast_1d(np.asarray(state, dtype=np.int64))
    if np.any(alpha < 0) or alpha.sum() > 2 * N:
        raise DomainError(f"{alpha.tolist()} is not a state of I_2N with 2N={2 * N}")
    return alpha, N


def _log_pmf_rows(p_full: np.ndarray, targets_full: np.ndarray, lf: np.ndarray) -> np.ndarray:
    """log multinomial pmf for every (source row of p_full, target) pair."""
    n = targets_full[0].sum()
    with np.errstate(divide="ignore"):
        logp = np.log(p_full)
    # 0 * log 0 = 0: zero counts contribute nothing even when p = 0
    counts = targets_full.astype(float)
    safe = np.where(np.isfinite(logp), logp, 0.0)
    out = counts @ safe.T
    impossible = (targets_full[:, None, :] > 0) & ~np.isfinite(logp)[None, :, :]
    out = np.where(impossible.any(axis=-1), -np.inf, out)
    out += lf[n] - lf[targets_full].sum(axis=1)[:, None]
    return out.T


def transition_probability(src, dst, U: MutationMatrix, N: int | None = None) -> float:
    """One-step probability ``P(Y(1) = dst | Y(0) = src)`` (multinomial pmf)."""
    a, Na = _to_alpha(src, N)
    b, Nb = _to_alpha(dst, N if N is not None else Na)
    if Na != Nb:
        raise DomainError("source and target states belong to different population sizes")
    if a.size != U.r - 1 or b.size != U.r - 1:
        raise DomainError("state dimension does not match the mutation matrix")
    n = 2 * Na
    p = full_frequencies(adjusted_frequencies(a / n, U))
    bf = np.append(b, n - b.sum())
    return float(np.exp(_log_pmf_rows(p[None, :], bf[None, :], _log_factorials(n))[0, 0]))


def transition_matrix(U: MutationMatrix, N: int, cap: int = _DENSE_LIMIT) -> np.ndarray:
    """Dense ``S x S`` transition matrix over :func:`lattice_states` order."""
    r = U.r
    S = num_lattice_states(N, r)
    if S > cap:
        raise CapacityError(f"{S} states exceed the dense-matrix limit {cap}")
    states = _states(N, r)
    n = 2 * N
    p = full_frequencies(adjusted_frequencies(states / n, U))
    tf = np.hstack([states, n - states.sum(axis=1, keepdims=True)])
    P = np.exp(_log_pmf_rows(p, tf, _log_factorials(n)))
    return P


@dataclass
class ChainDistribution:
    """Probability masses over I_2N in colexicographic state order."""

    N: int
    r: int
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (num_lattice_states(self.N, self.r),):
            raise DomainError("probability vector does not match the state space")

    @property
    def states(self) -> np.ndarray:
        return _states(self.N, self.r)

    @property
    def points(self) -> np.ndarray:
        return self.states / (2.0 * self.N)

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    @classmethod
    def point_mass(cls, state, N: int | None = None, r: int | None = None) -> "ChainDistribution":
        alpha, N = _to_alpha(state, N)
        r = alpha.size + 1 if r is None else r
        probs = np.zeros(num_lattice_states(N, r))
        probs[state_index(alpha, N, r)] = 1.0
        return cls(N, r, probs)

    def expectation(self, f) -> float:
        return float(self.probs @ f(self.points))

    def as_dict(self) -> dict:
        return {tuple(s): float(p) for s, p in zip(self.states.tolist(), self.probs)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"alpha_{i + 1}" for i in range(self.r - 1)] + ["prob"])
            for s, p in zip(self.states.tolist(), self.probs):
                w.writerow(s + [repr(float(p))])


def enumerated_moments(alpha, U: MutationMatrix, N: int):
    """One-step moments of ``Y(1) - y`` by summing over every multinomial outcome.

    Returns ``(mean, second, third_diag)`` like :func:`wfapprox.model.one_step_moments`
    (raw second and third moments about the starting point).
    """
    alpha = np.asarray(alpha, dtype=np.int64)
    n = 2 * N
    states = _states(N, U.r)
    p = full_frequencies(adjusted_frequencies(alpha / n, U))
    tf = np.hstack([states, n - states.sum(axis=1, keepdims=True)])
    w = np.exp(_log_pmf_rows(p[None, :], tf, _log_factorials(n))[0])
    dev = states / n - alpha / n
    mean = w @ dev
    second = np.einsum("s,si,sj->ij", w, dev, dev)
    third = w @ dev**3
    return mean, second, third


def _check_cap(N: int, r: int, cap: int) -> int:
    S = num_lattice_states(N, r)
    if S > cap:
        raise CapacityError(
            f"state space has {S} states (cap {cap}); use Monte Carlo sampling instead"
        )
    return S


def evolve_distribution(init: ChainDistribution, U: MutationMatrix, n: int,
                        cap: int = DEFAULT_STATE_CAP) -> ChainDistribution:
    """Exact law after n generations by repeated one-step pushforward."""
    if init.r != U.r:
        raise DomainError("distribution and mutation matrix disagree on r")
    if n < 0:
        raise DomainError("number of generations must be non-negative")
    S = _check_cap(init.N, init.r, cap)
    if n == 0:
        return ChainDistribution(init.N, init.r, init.probs.copy())
    p = init.probs
    if S <= _DENSE_LIMIT:
        P = transition_matrix(U, init.N)
        for _ in range(n):
            p = p @ P
    else:
        for _ in range(n):
            p = _pushforward_chunked(p, U, init.N)
    return ChainDistribution(init.N, init.r, p)


def _pushforward_chunked(p: np.ndarray, U: MutationMatrix, N: int, chunk: int = 256) -> np.ndarray:
    states = _states(N, U.r)
    n = 2 * N
    tf = np.hstack([states, n - states.sum(axis=1, keepdims=True)])
    lf = _log_factorials(n)
    out = np.zeros_like(p)
    live = np.flatnonzero(p > 0)
    for start in range(0, live.size, chunk):
        rows = live[start:start + chunk]
        pf = full_frequencies(adjusted_frequencies(states[rows] / n, U))
        out += p[rows] @ np.exp(_log_pmf_rows(pf, tf, lf))
    return out


def n_step_matrix(U: MutationMatrix, N: int, n: int) -> np.ndarray:
    """``P^n`` for small state spaces (rows are starting states)."""
    return np.linalg.matrix_power(transition_matrix(U, N), n)


def chain_expectation(f, x0, U: MutationMatrix, n: int, N: int | None = None,
                      cap: int = DEFAULT_STATE_CAP) -> float:
    """Exact ``E[f(Y(n)) | Y(0) = x0]``; ``x0`` is a LatticeState or counts with N."""
    dist = ChainDistribution.point_mass(x0, N, U.r)
    return evolve_distribution(dist, U, n, cap).expectation(f)


def chain_expectations_all(fs, U: MutationMatrix, N: int, ns) -> np.ndarray:
    """Exact ``E_x f(Y(n))`` for every start state, function and horizon.

    Returns an array of shape ``(len(fs), len(ns), S)``.
    """
    P = transition_matrix(U, N)
    pts = _states(N, U.r) / (2.0 * N)
    vals = np.stack([f(pts) for f in fs], axis=1)  # (S, F)
    ns = list(ns)
    out = np.zeros((len(fs), len(ns), P.shape[0]))
    cur, step = vals, 0
    for j, n in sorted(enumerate(ns), key=lambda t: t[1]):
        while step < n:
            cur = P @ cur
            step += 1
        out[:, j, :] = cur.T
    return out


# --------------------------------------------------------------------------
# sampling


def sample_step(alpha, U: MutationMatrix, N: int, rng: np.random.Generator) -> np.ndarray:
    """One generation for a batch of count vectors (shape ``(..., r-1)``).

    The multinomial draw is done by sequential conditional binomials: the
    count of allele i is Binomial(remaining trials, p_i / remaining mass).
    """
    alpha = np.asarray(alpha, dtype=np.int64)
    n = 2 * N
    p = adjusted_frequencies(alpha / n, U)
    out = np.empty_like(alpha)
    remaining = np.full(alpha.shape[:-1], n, dtype=np.int64)
    mass = np.ones(alpha.shape[:-1])
    for i in range(alpha.shape[-1]):
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(mass > 0, p[..., i] / mass, 0.0)
        q = np.clip(q, 0.0, 1.0)
        k = rng.binomial(remaining, q)
        out[..., i] = k
        remaining = remaining - k
        mass = mass - p[..., i]
    return out


@dataclass
class ChainPath:
    states: np.ndarray  # (n_max + 1, r - 1) integer counts
    N: int

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + [f"alpha_{i + 1}" for i in range(d)])
            for k, s in enumerate(self.states.tolist()):
                w.writerow([k] + s)


def sample_path(x0, U: MutationMatrix, n: int, rng: np.random.Generator,
                N: int | None = None) -> ChainPath:
    alpha, N = _to_alpha(x0, N)
    states = np.empty((n + 1, alpha.size), dtype=np.int64)
    states[0] = alpha
    for k in range(n):
        states[k + 1] = sample_step(states[k], U, N, rng)
    return ChainPath(states, N)


def chain_expectation_mc(f, x0, U: MutationMatrix, n: int, replicates: int, seed: int,
                         N: int | None = None) -> tuple[float, float]:
    """Monte Carlo ``(mean, std_error)`` of ``f(Y(n))`` for large state spaces."""
    if replicates < 2:
        raise DomainError("need at least two replicates for a standard error")
    alpha, N = _to_alpha(x0, N)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4A1]))
    cur = np.broadcast_to(alpha, (replicates, alpha.size)).copy()
    for _ in range(n):
        cur = sample_step(cur, U, N, rng)
    vals = f(cur / (2.0 * N))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(replicates))


def lattice_point(x, N: int) -> LatticeState:
    return LatticeState(tuple(lattice_counts(x, N)), N)
