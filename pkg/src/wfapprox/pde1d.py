"""Two-allele Kolmogorov backward equation on [0, 1].

``dF/dt = x(1-x)/(4N) F'' + (u21 (1-x) - u12 x) F'`` with ``F(0, .) = f``,
discretised by central differences in space and a theta-scheme in time.
The diffusion coefficient vanishes at both ends, where the equation reduces
to a transport equation whose characteristics point into the interval; those
two rows use second-order one-sided differences and no boundary condition is
imposed. Polynomials of degree <= 2 are reproduced exactly in space.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import chain
from .bounds import corollary_rates
from .model import DomainError, MutationMatrix
from .testfuncs import TestFunction, scalar_derivative_sup


class NumericalError(ArithmeticError):
    """The time stepping is not contracting in sup-norm."""


@dataclass(frozen=True)
class Grid1D:
    M: int = 1024
    dt: float = 1e-3
    theta: float = 0.5

    def __post_init__(self):
        if self.M < 64:
            raise DomainError("need at least 64 cells")
        if not self.dt > 0:
            raise DomainError("time step must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise DomainError("theta must lie in [1/2, 1] for unconditional stability")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M

    @property
    def h(self) -> float:
        return 1.0 / self.M

    def coarsened(self) -> "Grid1D":
        return Grid1D(self.M // 2, self.dt * 2, self.theta)

    def aligned_to(self, two_n: int) -> "Grid1D":
        """Smallest grid with at least M cells whose nodes contain ``k / two_n``."""
        M = -(-self.M // two_n) * two_n
        return Grid1D(M, self.dt, self.theta)


@dataclass
class BackwardSolution:
    """``values[k, j] = F(times[k], x_j)`` (one column block per test function if stacked)."""

    times: np.ndarray
    x: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise DomainError(f"time {t} was not saved")
        return self.values[k]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "F"])
            for t, row in zip(self.times.tolist(), self.values):
                for x, v in zip(self.x.tolist(), np.atleast_2d(row.T)[0].tolist() if row.ndim > 1 else row.tolist()):
                    w.writerow([repr(t), repr(x), repr(v)])


def generator_matrix(N: int, u12: float, u21: float, M: int) -> sp.csr_matrix:
    """Finite-difference approximation of the two-allele generator on M+1 nodes."""
    x = np.arange(M + 1) / M
    h = 1.0 / M
    a = x * (1 - x) / (4 * N)
    c = u21 * (1 - x) - u12 * x
    rows, cols, vals = [], [], []

    def put(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    for j in range(1, M):
        put(j, j - 1, a[j] / h**2 - c[j] / (2 * h))
        put(j, j, -2 * a[j] / h**2)
        put(j, j + 1, a[j] / h**2 + c[j] / (2 * h))
    # x = 0: a = 0 and c = u21 >= 0 looks inward
    put(0, 0, -3 * c[0] / (2 * h))
    put(0, 1, 4 * c[0] / (2 * h))
    put(0, 2, -c[0] / (2 * h))
    # x = 1: a = 0 and c = -u12 <= 0 looks inward
    put(M, M, 3 * c[M] / (2 * h))
    put(M, M - 1, -4 * c[M] / (2 * h))
    put(M, M - 2, c[M] / (2 * h))
    return sp.csr_matrix((vals, (rows, cols)), shape=(M + 1, M + 1))


def _as_columns(fs, x):
    if isinstance(fs, TestFunction) or callable(fs) and not isinstance(fs, (list, tuple)):
        fs = [fs]
    return np.stack([np.asarray(f(x), dtype=float) for f in fs], axis=1)


def solve_backward(f, N: int, u12: float, u21: float, T: float, grid: Grid1D = Grid1D(),
                   save_times=None) -> BackwardSolution:
    """March ``F(t, .) = E_. f(X(t))`` from 0 to T.

    ``f`` is a test function or a list of them (solved together, stacked on
    the last axis of ``values``). ``save_times`` defaults to every integer
    generation up to T.
    """
    if T <= 0:
        raise DomainError("horizon T must be positive")
    for v in (u12, u21):
        if not 0.0 <= v <= 1.0:
            raise DomainError("mutation rates must lie in [0, 1]")
    single = not isinstance(f, (list, tuple))
    x = grid.nodes
    F = _as_columns(f, x)
    steps = round(T / grid.dt)
    if abs(steps * grid.dt - T) > 1e-9 * max(1.0, T):
        raise DomainError("T must be a multiple of the PDE time step")
    if save_times is None:
        save_times = np.arange(0, math.floor(T) + 1, dtype=float)
        if save_times[-1] != T:
            save_times = np.append(save_times, T)
    save_steps = {}
    for t in np.atleast_1d(save_times):
        k = round(t / grid.dt)
        if abs(k * grid.dt - t) > 1e-9 * max(1.0, t) or k > steps or k < 0:
            raise DomainError(f"cannot save time {t}")
        save_steps[k] = t
    L = generator_matrix(N, u12, u21, grid.M)
    eye = sp.identity(grid.M + 1, format="csc")
    lhs = splu((eye - grid.theta * grid.dt * L).tocsc())
    rhs = (eye + (1 - grid.theta) * grid.dt * L).tocsr()
    keys = sorted(save_steps)
    out = np.empty((len(keys),) + F.shape)
    pos = {k: i for i, k in enumerate(keys)}
    if 0 in pos:
        out[pos[0]] = F
    norm = np.max(np.abs(F), axis=0)
    for k in range(1, steps + 1):
        F = lhs.solve(rhs @ F)
        new = np.max(np.abs(F), axis=0)
        if np.any(new > norm * (1 + 1e-6) + 1e-14):
            raise NumericalError(f"sup-norm grew from {norm.max()} to {new.max()} at step {k}")
        norm = new
        if k in pos:
            out[pos[k]] = F
    values = out[..., 0] if single else out
    return BackwardSolution(np.array([save_steps[k] for k in keys]), x, values)


def richardson_slack(f, N: int, u12: float, u21: float, T: float, grid: Grid1D = Grid1D(),
                     save_times=None, fine: BackwardSolution | None = None):
    """Estimated discretisation error of the fine solution at the coarse nodes.

    Both errors are second order, so ``|F_h - F_2h| / 3`` estimates the error
    of ``F_h``. A rounding allowance of one machine epsilon per time step
    (times ``sup|f|``) is added, which matters only when the truncation error
    vanishes, as it does for polynomials of degree <= 2.

    Returns ``(fine_solution, slack)``; ``slack`` has the shape of
    ``fine.values`` restricted to the coarse nodes.
    """
    if fine is None:
        fine = solve_backward(f, N, u12, u21, T, grid, save_times)
    coarse = solve_backward(f, N, u12, u21, T, grid.coarsened(), fine.times)
    diff = np.abs(fine.values[:, ::2] - coarse.values) / 3.0
    # rounding: one unit of eps per step, relative to the data size
    steps = np.asarray(fine.times) / grid.dt
    scale = np.abs(fine.values).max(axis=(0, 1))
    rounding = np.finfo(float).eps * steps.reshape((-1,) + (1,) * (diff.ndim - 1)) * scale
    return fine, diff + rounding


# --------------------------------------------------------------------------
# derivative decay


def grid_derivative(values: np.ndarray, m: int, h: float) -> np.ndarray:
    """m-th derivative by repeated differences; values on the midpoints of the stencil."""
    d = np.asarray(values, dtype=float)
    for _ in range(m):
        d = np.diff(d, axis=-1) / h
    return d


def derivative_decay_check(f: TestFunction, m: int, N: int, u12: float, u21: float, T: float,
                           grid: Grid1D = Grid1D(), save_times=None) -> list[dict]:
    """Compare ``sup_x |d^m F(t, .)|`` with ``sup|f^(m)| exp(-t lambda~_m)``.

    Returns one record per saved time with the observed sup, the bound, the
    grid error estimate (Richardson plus rounding in the difference quotient) and
    ``margin = bound + eps_grid - sup_derivative`` (non-negative when the
    decay inequality holds within the estimated grid error).
    """
    if not 1 <= m <= 4:
        raise DomainError("derivative order must be 1..4")
    lam = corollary_rates(u12, u21, N)[m - 1]
    f0 = scalar_derivative_sup(f, m)
    fine = solve_backward(f, N, u12, u21, T, grid, save_times)
    coarse = solve_backward(f, N, u12, u21, T, grid.coarsened(), fine.times)
    sup_f = np.abs(grid_derivative(fine.values, m, grid.h)).max(axis=-1)
    sup_c = np.abs(grid_derivative(coarse.values, m, 2 * grid.h)).max(axis=-1)
    # truncation by Richardson, plus rounding in F (random-walk growth over the
    # steps) amplified by the 2^m / h^m of the difference quotient
    steps = fine.times / grid.dt
    sup_F = np.abs(fine.values).max(axis=-1)
    rounding = (np.sqrt(steps) + 1) * np.finfo(float).eps * sup_F * 2**m / grid.h**m
    eps = np.abs(sup_f - sup_c) / 3.0 + rounding
    report = []
    for t, s, e in zip(fine.times, sup_f, eps):
        bound = f0 * math.exp(-t * lam)
        report.append({"t": float(t), "sup_derivative": float(s), "bound": bound,
                       "eps_grid": float(e), "margin": float(bound + e - s)})
    return report


def decay_rate_fit(report: list[dict], t_min: float = 0.0) -> float:
    """Least-squares slope of ``-log sup|d^m F|`` against t."""
    t = np.array([r["t"] for r in report if r["t"] >= t_min])
    s = np.array([r["sup_derivative"] for r in report if r["t"] >= t_min])
    slope = np.polyfit(t, np.log(s), 1)[0]
    return float(-slope)


def decay_report_json(reports: dict, path) -> None:
    """Write ``{m: [{t, sup_derivative, bound, margin}, ...]}``."""
    with open(path, "w") as fh:
        json.dump({str(m): rows for m, rows in reports.items()}, fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# chain versus PDE


def pde_lattice_values(fs, N: int, u12: float, u21: float, ns, grid: Grid1D = Grid1D(),
                       with_slack: bool = True):
    """``F(n, alpha/2N)`` at every lattice point with its error estimate.

    Returns ``(values, slack)``, each of shape ``(len(fs), len(ns), 2N + 1)``.
    The grid is refined so that the lattice points are nodes of both the fine
    and the coarse Richardson grid.
    """
    fs = list(fs)
    ns = [int(n) for n in ns]
    two_n = 2 * N
    g = grid.aligned_to(2 * two_n)
    lattice = np.arange(two_n + 1) / two_n
    values = np.empty((len(fs), len(ns), two_n + 1))
    slack = np.zeros_like(values)
    for j, n in enumerate(ns):
        if n == 0:
            values[:, j, :] = np.stack([f(lattice) for f in fs])
    T = max(ns)
    if T == 0:
        return values, slack
    times = sorted(set(n for n in ns if n > 0))
    if with_slack:
        fine, slack_all = richardson_slack(fs, N, u12, u21, T, g, times)
    else:
        fine = solve_backward(fs, N, u12, u21, T, g, times)
        slack_all = None
    stride = g.M // two_n
    for j, n in enumerate(ns):
        if n == 0:
            continue
        k = times.index(n)
        values[:, j, :] = fine.values[k][::stride].T
        if slack_all is not None:
            slack[:, j, :] = slack_all[k][:: stride // 2].T
    return values, slack


def pde_chain_gaps(fs, N: int, u12: float, u21: float, ns, grid: Grid1D = Grid1D(),
                   with_slack: bool = True):
    """Noise-free two-allele gaps at every lattice start point.

    Returns ``(gaps, slack)`` of shape ``(len(fs), len(ns), 2N + 1)``:
    ``|F(n, alpha/2N) - E_alpha f(Y(n))|`` with F from the backward solver and
    the chain expectation exact, plus the error estimate of F.
    """
    fs = list(fs)
    U = MutationMatrix.two_allele(u12, u21)
    chain_vals = chain.chain_expectations_all(fs, U, N, ns)
    values, slack = pde_lattice_values(fs, N, u12, u21, ns, grid, with_slack)
    return np.abs(values - chain_vals), slack


def pde_chain_gap(f, x0, N: int, u12: float, u21: float, n: int, grid: Grid1D = Grid1D()) -> float:
    """``|F(n, x0) - E_x0 f(Y(n))|`` for a single start point and horizon."""
    alpha = chain.lattice_point(x0, N).alpha[0] if not isinstance(x0, (int, np.integer)) else int(x0)
    gaps, _ = pde_chain_gaps([f], N, u12, u21, [n], grid, with_slack=False)
    return float(gaps[0, 0, alpha])
