"""Measured chain/diffusion gaps set against the explicit bounds, and the property suite.

Two-allele gaps are noise-free: the diffusion side comes from the backward
equation and the chain side from the exact law. With three or more alleles the
chain is exact while the state space is small and the diffusion side is a
Monte Carlo mean.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import chain, diffusion, pde1d
from .bounds import BoundReport, total_bound
from .model import (
    SIMPLEX_TOL,
    MutationMatrix,
    boundary_conditions_check,
    covariance,
    lattice_states,
    num_lattice_states,
    one_step_moments,
)
from .testfuncs import TestFunction, derivative_norms, scalar_derivative_sup

BAND_K = 3.0

PASS, INCONCLUSIVE, VIOLATION = "pass", "inconclusive", "violation"


def bound_norms(f: TestFunction) -> np.ndarray:
    """Derivative norms fed to the bound: scalar sups at r = 2, certified tensor sups otherwise."""
    if f.r == 2:
        return np.array([scalar_derivative_sup(f, m) for m in range(1, 5)])
    return derivative_norms(f)


@dataclass
class GapEstimate:
    """One (f, n, x0) cell: both expectations, their gap and the bound.

    ``band`` is the standard error of the gap (standard errors combined in
    quadrature) for Monte Carlo cells and the discretisation slack for the
    noise-free ones.
    """

    f_name: str
    n: int
    x0: list
    chain_value: float
    chain_se: float
    diffusion_value: float
    diffusion_se: float
    gap: float
    band: float
    bound: BoundReport
    noise_free: bool
    chain_method: str = "exact"
    diffusion_method: str = "pde"
    status: str = field(init=False)

    def __post_init__(self):
        self.status = classify(self.gap, self.band, self.bound.total, self.noise_free)

    @property
    def dominated(self) -> bool:
        return self.status != VIOLATION

    def to_dict(self) -> dict:
        return {
            "f": self.f_name,
            "n": self.n,
            "x0": self.x0,
            "chain_value": self.chain_value,
            "chain_se": self.chain_se,
            "chain_method": self.chain_method,
            "diffusion_value": self.diffusion_value,
            "diffusion_se": self.diffusion_se,
            "diffusion_method": self.diffusion_method,
            "gap": self.gap,
            "gap_error_band": self.band,
            "bound": self.bound.to_dict(),
            "dominated": self.dominated,
            "status": self.status,
        }


def classify(gap: float, band: float, bound: float, noise_free: bool) -> str:
    """Verdict for one cell.

    A cell is dominated when ``gap - BAND_K * band <= bound``; anything else is
    a violation. A dominated cell passes outright when ``gap <= bound`` for
    Monte Carlo cells, or ``gap - band <= bound`` for noise-free cells (whose
    band is a deterministic discretisation estimate); otherwise it is
    inconclusive.
    """
    if gap - BAND_K * band > bound:
        return VIOLATION
    if gap - (band if noise_free else 0.0) <= bound:
        return PASS
    return INCONCLUSIVE


def overall_status(estimates) -> str:
    statuses = {e.status for e in estimates}
    if VIOLATION in statuses:
        return VIOLATION
    if INCONCLUSIVE in statuses:
        return INCONCLUSIVE
    return PASS


# --------------------------------------------------------------------------
# gap experiments


def certify_r2(fs, N: int, u12: float, u21: float, ns, x0s=None,
               grid: pde1d.Grid1D = pde1d.Grid1D()) -> list[GapEstimate]:
    """Noise-free cells for every f, n and start point (all lattice points by default)."""
    fs = list(fs)
    ns = [int(n) for n in ns]
    U = MutationMatrix.two_allele(u12, u21)
    two_n = 2 * N
    if x0s is None:
        alphas = list(range(two_n + 1))
    else:
        alphas = [chain.lattice_point(np.atleast_1d(x), N).alpha[0] for x in x0s]
    pde_vals, slack = pde1d.pde_lattice_values(fs, N, u12, u21, ns, grid)
    chain_vals = chain.chain_expectations_all(fs, U, N, ns)
    out = []
    for i, f in enumerate(fs):
        norms = bound_norms(f)
        for j, n in enumerate(ns):
            report = total_bound(U, N, n, norms)
            for a in alphas:
                cv, dv = float(chain_vals[i, j, a]), float(pde_vals[i, j, a])
                out.append(GapEstimate(
                    f.name or f"f{i}", n, [a / two_n], cv, 0.0, dv, 0.0, abs(dv - cv),
                    float(slack[i, j, a]), report, noise_free=True,
                ))
    return out


def certify_r3(fs, x0, U: MutationMatrix, N: int, ns, dcfg: diffusion.DiffusionConfig,
               replicates: int, seed: int, workers: int | None = None,
               cap: int = chain.DEFAULT_STATE_CAP) -> tuple[list[GapEstimate], list[str]]:
    """Cells at one start point: exact chain (Monte Carlo above ``cap``) against diffusion Monte Carlo.

    Returns the estimates and a list of notes (for example the capacity switch).
    """
    fs = list(fs)
    ns = [int(n) for n in ns]
    notes = []
    alpha = chain.lattice_point(x0, N).alpha
    x0 = np.asarray(alpha, dtype=float) / (2 * N)
    S = num_lattice_states(N, U.r)
    exact = S <= cap
    chain_vals = np.zeros((len(fs), len(ns)))
    chain_ses = np.zeros_like(chain_vals)
    if exact:
        init = chain.ChainDistribution.point_mass(alpha, N, U.r)
        for j, n in enumerate(ns):
            dist = chain.evolve_distribution(init, U, n, cap)
            chain_vals[:, j] = [dist.expectation(f) for f in fs]
    else:
        notes.append(f"state space has {S} states (cap {cap}); chain side switched to Monte Carlo")
        for i, f in enumerate(fs):
            for j, n in enumerate(ns):
                chain_vals[i, j], chain_ses[i, j] = chain.chain_expectation_mc(
                    f, alpha, U, n, replicates, seed, N)
    diff_means, diff_ses = diffusion.weak_expectations(
        fs, x0, dcfg, [float(n) for n in ns], replicates, seed, workers)
    out = []
    for i, f in enumerate(fs):
        norms = bound_norms(f)
        for j, n in enumerate(ns):
            report = total_bound(U, N, n, norms)
            gap = abs(float(diff_means[i, j] - chain_vals[i, j]))
            band = math.hypot(float(diff_ses[i, j]), float(chain_ses[i, j]))
            out.append(GapEstimate(
                f.name or f"f{i}", n, x0.tolist(), float(chain_vals[i, j]), float(chain_ses[i, j]),
                float(diff_means[i, j]), float(diff_ses[i, j]), gap, band, report,
                noise_free=False, chain_method="exact" if exact else "monte_carlo",
                diffusion_method="monte_carlo",
            ))
    return out, notes


def write_summary_csv(estimates, path) -> None:
    cols = ["f", "n", "x0", "chain_value", "diffusion_value", "gap", "gap_error_band", "bound", "status"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for e in estimates:
            w.writerow([e.f_name, e.n, " ".join(repr(v) for v in e.x0), repr(e.chain_value),
                        repr(e.diffusion_value), repr(e.gap), repr(e.band), repr(e.bound.total), e.status])


# --------------------------------------------------------------------------
# property suite


def check_moment_identities(max_two_n: int = 8, rs=(2, 3, 4), matrices: int = 20,
                            seed: int = 0) -> dict:
    """Largest deviation between the closed-form one-step moments and enumeration."""
    rng = np.random.default_rng(seed)
    worst = {"mean": 0.0, "second": 0.0, "third": 0.0}
    cases = 0
    for r in rs:
        mats = [MutationMatrix.random(r, rng) for _ in range(matrices)]
        for U in mats:
            for N in range(1, max_two_n // 2 + 1):
                for alpha in lattice_states(N, r):
                    got = one_step_moments(alpha / (2.0 * N), U, N)
                    ref = chain.enumerated_moments(alpha, U, N)
                    for key, a, b in zip(worst, got, ref):
                        worst[key] = max(worst[key], float(np.max(np.abs(a - b))))
                    cases += 1
    return {"cases": cases, "max_error": worst, "passed": max(worst.values()) <= 1e-12}


def check_psd(samples: int = 10_000, rs=(2, 3, 4, 5), seed: int = 0) -> dict:
    """Smallest covariance eigenvalue and worst factor reconstruction over random points."""
    rng = np.random.default_rng(seed)
    min_eig, worst_fact = np.inf, 0.0
    for r in rs:
        x = rng.dirichlet(np.ones(r), size=samples)[:, :-1]
        # a tenth of the points on the boundary
        k = samples // 10
        x[np.arange(k), rng.integers(0, r - 1, size=k)] = 0.0
        x[k:2 * k] = rng.dirichlet(np.ones(r - 1), size=k) if r > 2 else rng.integers(0, 2, (k, 1))
        A = covariance(x)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(A).min()))
        sigma = diffusion.psd_factor(A)
        worst_fact = max(worst_fact, float(np.linalg.norm(sigma @ np.swapaxes(sigma, -1, -2) - A, axis=(-2, -1)).max()))
    return {"min_eigenvalue": min_eig, "max_factor_error": worst_fact,
            "passed": min_eig >= -1e-12 and worst_fact <= 1e-10}


def face_points(face: int, r: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random points on a face of I (faces ``0..r-2`` are ``x_i = 0``, face ``r-1`` is ``sum x = 1``)."""
    if face == r - 1:
        return rng.dirichlet(np.ones(r - 1), size=count)
    full = rng.dirichlet(np.ones(r), size=count)[:, :-1]
    full[:, face] = 0.0
    return full


def check_boundary(U_by_r: dict, N: int, points: int = 100, seed: int = 0) -> dict:
    """Normal diffusion and normal drift on every face for each supplied matrix."""
    rng = np.random.default_rng(seed)
    max_diff, min_drift = 0.0, np.inf
    for r, U in sorted(U_by_r.items()):
        for face in range(r):
            for x in face_points(face, r, points, rng):
                dn, bn = boundary_conditions_check(x, face, U, N)
                max_diff = max(max_diff, abs(dn))
                min_drift = min(min_drift, bn)
    return {"max_abs_diffusion_normal": max_diff, "min_drift_normal": float(min_drift),
            "passed": max_diff <= SIMPLEX_TOL and min_drift >= -SIMPLEX_TOL}


def check_holder(pairs: int = 1_000_000, seed: int = 0) -> dict:
    v = diffusion.holder_modulus_check_r2(pairs, np.random.default_rng(seed))
    return {"pairs": pairs, "max_violation": v, "passed": v <= 1e-12}


def check_decay(N: int, u12: float, u21: float, T: float = 10.0, orders=(1, 2),
                grid: pde1d.Grid1D = pde1d.Grid1D()) -> dict:
    """Derivative decay margins for ``x`` (order 1) and ``x^2`` (order 2) and the quartic mix."""
    fs = {
        1: [TestFunction.univariate([0, 1], name="x"), TestFunction.univariate([0, 0.5, 1, -2, 1], name="x^4-mix")],
        2: [TestFunction.univariate([0, 0, 1], name="x^2"), TestFunction.univariate([0, 0.5, 1, -2, 1], name="x^4-mix")],
    }
    rows, worst = [], np.inf
    for m in orders:
        for f in fs.get(m, fs[2]):
            report = pde1d.derivative_decay_check(f, m, N, u12, u21, T, grid)
            margin = min(r["margin"] for r in report)
            worst = min(worst, margin)
            rows.append({"m": m, "f": f.name, "min_margin": margin, "report": report})
    return {"checks": rows, "min_margin": float(worst), "passed": worst >= 0}


def run_verification(N: int = 10, u12: float = 0.05, u21: float = 0.05, seed: int = 0,
                     U_by_r: dict | None = None, holder_pairs: int = 1_000_000) -> dict:
    """The full property suite; ``passed`` is the conjunction of every check."""
    rng = np.random.default_rng(seed)
    if U_by_r is None:
        U_by_r = {r: MutationMatrix.random(r, rng) for r in (3, 4)}
    checks = {
        "moment_identities": check_moment_identities(seed=seed),
        "psd": check_psd(seed=seed),
        "boundary": check_boundary(U_by_r, N, seed=seed),
        "holder": check_holder(holder_pairs, seed),
        "decay": check_decay(N, u12, u21),
    }
    return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}
