"""The approximating diffusion on the simplex and its Euler-Maruyama simulation.

``dX = b(X) dt + sigma(X) dB / sqrt(2N)`` with ``sigma sigma^T = A``. Each
Euler step is followed by Euclidean projection onto I, so sampled states
never leave the simplex. Time is measured in generations.

Monte Carlo estimates are computed in fixed-size replicate blocks, each with
its own stream derived from ``(seed, block index)``, and merged in block
order; the result therefore depends only on the seed and replicate count,
not on the number of worker processes.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import ndtri

from .model import DomainError, MutationMatrix, as_simplex_point, covariance, drift

PIVOT_FLOOR = 1e-12
BLOCK_SIZE = 1 << 15


class NumericalDomainError(ArithmeticError):
    """A matrix that should be positive semi-definite is not."""


@dataclass(frozen=True)
class DiffusionConfig:
    N: int
    U: MutationMatrix
    dt: float = 1.0 / 64
    projection_tolerance: float = 1e-12

    def __post_init__(self):
        if self.N < 1:
            raise DomainError("population size N must be >= 1")
        if not 0 < self.dt <= 1:
            raise DomainError("time step must lie in (0, 1]")
        k = round(1 / self.dt)
        if abs(k * self.dt - 1) > 1e-12:
            raise DomainError("time step must divide one generation evenly (dt = 1/k)")

    @property
    def substeps_per_generation(self) -> int:
        return round(1 / self.dt)

    def steps_for(self, t: float) -> int:
        k = round(t / self.dt)
        if abs(k * self.dt - t) > 1e-9 * max(1.0, t):
            raise DomainError(f"time {t} is not a multiple of dt={self.dt}")
        return k


# --------------------------------------------------------------------------
# linear algebra and geometry


def psd_factor(A, pivot_floor: float = PIVOT_FLOOR, check: bool = True) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = A`` for PSD (possibly singular) A.

    Cholesky elimination in which any pivot at or below ``pivot_floor`` has
    its whole column set to zero; for a PSD matrix the entries below such a
    pivot are bounded by ``sqrt(pivot * a_ii)``, so rank-deficient inputs
    (boundary points of the simplex) factor cleanly. Works on stacks of
    matrices along leading axes.
    """
    A = np.array(A, dtype=float)
    if check:
        if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
            raise DomainError("expected square matrices")
        if not np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-14, rtol=0):
            raise NumericalDomainError("matrix is not symmetric")
        if A.shape[-1] and np.min(np.linalg.eigvalsh(A)) < -1e-10:
            raise NumericalDomainError("matrix has a negative eigenvalue below -1e-10")
    d = A.shape[-1]
    L = np.zeros_like(A)
    S = A
    for k in range(d):
        piv = S[..., k, k]
        ok = piv > pivot_floor
        root = np.sqrt(np.where(ok, piv, 1.0))
        col = np.where(ok[..., None], S[..., k:, k] / root[..., None], 0.0)
        L[..., k:, k] = col
        if k + 1 < d:
            S[..., k + 1:, k + 1:] -= col[..., 1:, None] * col[..., None, 1:]
    return L


def _in_simplex(x: np.ndarray) -> np.ndarray:
    return np.all(x >= 0, axis=-1) & (x.sum(axis=-1) <= 1.0)


def project_to_simplex(x) -> np.ndarray:
    """Euclidean projection of ``(x, 1 - sum x)`` onto the probability simplex.

    Operates on the full r-vector (sort-and-threshold algorithm) and returns
    the first ``r - 1`` coordinates. Points already in I are returned
    unchanged, so the map is idempotent.
    """
    x = np.asarray(x, dtype=float)
    inside = _in_simplex(x)
    if np.all(inside):
        return x.copy()
    v = np.concatenate([x, 1.0 - x.sum(axis=-1, keepdims=True)], axis=-1)
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ind = np.arange(1, v.shape[-1] + 1)
    rho = np.count_nonzero(u - css / ind > 0, axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    w = np.maximum(v - theta, 0.0)[..., :-1]
    s = w.sum(axis=-1, keepdims=True)
    w = np.divide(w, s, out=w.copy(), where=s > 1.0)
    # rounding in the division can leave the sum an ulp above one
    w = np.where(w.sum(axis=-1, keepdims=True) > 1.0, w * (1 - 1e-15), w)
    return np.where(inside[..., None], x, w)


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Gaussian draws by the inverse CDF applied to midpoint uniforms on a 2^-52 grid."""
    k = rng.integers(0, 1 << 52, size=shape, dtype=np.int64)
    return ndtri((k + 0.5) * 2.0**-52)


# --------------------------------------------------------------------------
# stepping


def _drift_fast(x: np.ndarray, last_row: np.ndarray, rates: np.ndarray) -> np.ndarray:
    # with the rate into allele i independent of the source, b_i = u_ri - x_i (sum_j u_ij + u_ri)
    return last_row - x * rates


def _cov_fast(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    A = -x[..., :, None] * x[..., None, :]
    idx = np.arange(d)
    A[..., idx, idx] += x
    return A


def _em_kernel(x, dt, N, last_row, rates, xi):
    sig = psd_factor(_cov_fast(x), check=False)
    # accumulate column by column so the result matches _em_block bit for bit
    noise = np.zeros(np.shape(x))
    for j in range(sig.shape[-1]):
        noise = noise + sig[..., :, j] * xi[..., j, None]
    return project_to_simplex(x + _drift_fast(x, last_row, rates) * dt + math.sqrt(dt / (2 * N)) * noise)


def em_step(x, cfg: DiffusionConfig, rng: np.random.Generator | None = None, xi=None) -> np.ndarray:
    """One projected Euler-Maruyama step from ``x`` (a point or a stack of points).

    ``xi`` overrides the Gaussian increments (pass zeros for the pure drift
    step); otherwise they are drawn from ``rng``.
    """
    x = as_simplex_point(x, cfg.U.r)
    if xi is None:
        if rng is None:
            raise DomainError("need an rng or explicit increments")
        xi = standard_normal(rng, x.shape)
    xi = np.asarray(xi, dtype=float)
    U = cfg.U
    return _em_kernel(x, cfg.dt, cfg.N, U.last_row, U.decay_rates, xi)


@njit(cache=True)
def _project_row(y, out):
    d = y.size
    v = np.empty(d + 1)
    tot = 0.0
    for i in range(d):
        v[i] = y[i]
        tot += y[i]
    v[d] = 1.0 - tot
    u = -np.sort(-v)
    css = 0.0
    theta = 0.0
    for j in range(d + 1):
        css += u[j]
        t = (css - 1.0) / (j + 1)
        if u[j] - t > 0:
            theta = t
    s = 0.0
    for i in range(d):
        out[i] = max(y[i] - theta, 0.0)
        s += out[i]
    if s > 1.0:
        s2 = 0.0
        for i in range(d):
            out[i] /= s
            s2 += out[i]
        if s2 > 1.0:
            for i in range(d):
                out[i] *= 1 - 1e-15


@njit(cache=True)
def _em_block(x, xi, dt, scale, last_row, rates, floor):
    # in-place projected Euler step for every row of x; mirrors _em_kernel
    n, d = x.shape
    S = np.empty((d, d))
    L = np.zeros((d, d))
    y = np.empty(d)
    for p in range(n):
        for i in range(d):
            for j in range(d):
                S[i, j] = -x[p, i] * x[p, j]
            S[i, i] += x[p, i]
        for k in range(d):
            piv = S[k, k]
            if piv > floor:
                root = np.sqrt(piv)
                for i in range(k, d):
                    L[i, k] = S[i, k] / root
            else:
                for i in range(k, d):
                    L[i, k] = 0.0
            for i in range(k + 1, d):
                for j in range(k + 1, d):
                    S[i, j] -= L[i, k] * L[j, k]
        inside = True
        tot = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(i + 1):
                acc += L[i, j] * xi[p, j]
            y[i] = x[p, i] + (last_row[i] - x[p, i] * rates[i]) * dt + scale * acc
            if y[i] < 0.0:
                inside = False
            tot += y[i]
        if tot > 1.0:
            inside = False
        if inside:
            for i in range(d):
                x[p, i] = y[i]
        else:
            _project_row(y, x[p])


@dataclass
class DiffusionPath:
    times: np.ndarray
    states: np.ndarray

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
            for t, s in zip(self.times.tolist(), self.states.tolist()):
                w.writerow([repr(t)] + [repr(v) for v in s])


def simulate_path(x0, cfg: DiffusionConfig, t: float, rng: np.random.Generator) -> DiffusionPath:
    x = as_simplex_point(x0, cfg.U.r)
    k = cfg.steps_for(t)
    states = np.empty((k + 1, x.size))
    states[0] = x
    for i in range(k):
        states[i + 1] = em_step(states[i], cfg, rng)
    return DiffusionPath(np.arange(k + 1) * cfg.dt, states)


# --------------------------------------------------------------------------
# weak expectations


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(block)])))


def _block_moments(args):
    fs, x0, N, dt, last_row, rates, record_steps, seed, block, size = args
    rng = block_rng(seed, block)
    x = np.broadcast_to(x0, (size, x0.size)).copy()
    out = np.zeros((len(fs), len(record_steps), 3))
    targets = {s: j for j, s in enumerate(record_steps)}
    step = 0
    last = max(record_steps)

    def record(j):
        for i, f in enumerate(fs):
            v = f(x)
            m = v.mean()
            out[i, j] = (size, m, ((v - m) ** 2).sum())

    if 0 in targets:
        record(targets[0])
    scale = math.sqrt(dt / (2 * N))
    while step < last:
        xi = standard_normal(rng, x.shape)
        _em_block(x, xi, dt, scale, last_row, rates, PIVOT_FLOOR)
        step += 1
        if step in targets:
            record(targets[step])
    return out


def _merge(acc, new):
    na, ma, qa = acc[..., 0], acc[..., 1], acc[..., 2]
    nb, mb, qb = new[..., 0], new[..., 1], new[..., 2]
    n = na + nb
    delta = mb - ma
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(n > 0, nb / n, 0.0)
        cross = np.where(n > 0, delta**2 * na * nb / n, 0.0)
    return np.stack([n, ma + delta * frac, qa + qb + cross], axis=-1)


def default_workers() -> int:
    return int(os.environ.get("WFAPPROX_WORKERS", "1"))


def weak_expectations(fs, x0, cfg: DiffusionConfig, times, replicates: int, seed: int,
                      workers: int | None = None, block_size: int = BLOCK_SIZE):
    """Monte Carlo ``E[f(X(t)) | X(0) = x0]`` for several functions and times.

    Returns ``(means, std_errors)``, both of shape ``(len(fs), len(times))``.
    """
    if replicates < 2:
        raise DomainError("need at least two replicates for a standard error")
    x0 = as_simplex_point(x0, cfg.U.r)
    steps = [cfg.steps_for(t) for t in times]
    workers = default_workers() if workers is None else workers
    blocks = []
    for b, start in enumerate(range(0, replicates, block_size)):
        size = min(block_size, replicates - start)
        blocks.append((list(fs), x0, cfg.N, cfg.dt, cfg.U.last_row, cfg.U.decay_rates,
                       steps, seed, b, size))
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_block_moments, blocks))
    else:
        results = [_block_moments(a) for a in blocks]
    acc = np.zeros_like(results[0])
    for res in results:
        acc = _merge(acc, res)
    n = acc[..., 0]
    means = acc[..., 1]
    var = acc[..., 2] / (n - 1)
    return means, np.sqrt(var / n)


def weak_expectation(f, x0, cfg: DiffusionConfig, t: float, replicates: int, seed: int,
                     workers: int | None = None) -> tuple[float, float]:
    """``(mean, std_error)`` of ``f(X(t))`` started from ``x0``."""
    means, ses = weak_expectations([f], x0, cfg, [t], replicates, seed, workers)
    return float(means[0, 0]), float(ses[0, 0])


# --------------------------------------------------------------------------
# generator and regularity checks


def generator_apply(f, x, N: int, U: MutationMatrix) -> np.ndarray:
    """``Lf(x) = <A(x), Hess f(x)>_HS / 4N + <b(x), grad f(x)>``."""
    x = as_simplex_point(x, U.r)
    A = covariance(x)
    b = drift(x, U)
    H = f.hessian(x)
    g = f.gradient(x)
    return (A * H).sum(axis=(-1, -2)) / (4 * N) + (b * g).sum(axis=-1)


def holder_modulus_check_r2(sample_pairs: int, rng: np.random.Generator) -> float:
    """Largest value of ``|s(x) - s(y)|^2 - 2|x - y|`` with ``s(x) = sqrt(x(1-x))``.

    Pairs are uniform on the unit square, plus the corner and edge cases.
    A non-positive result means no violation of the square-root modulus.
    """
    x = rng.random(sample_pairs)
    y = rng.random(sample_pairs)
    edge = np.array([0.0, 1.0, 0.5, 0.0, 1.0, 1e-12])
    x = np.concatenate([x, edge, edge[::-1]])
    y = np.concatenate([y, edge[::-1], edge])
    s = lambda z: np.sqrt(z * (1 - z))  # noqa: E731
    return float(np.max((s(x) - s(y)) ** 2 - 2 * np.abs(x - y)))
