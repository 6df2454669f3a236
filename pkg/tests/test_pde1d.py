import json
import math

import numpy as np
import pytest

from wfapprox import diffusion as dif
from wfapprox import pde1d
from wfapprox.bounds import corollary_rates
from wfapprox.chain import chain_expectation
from wfapprox.model import DomainError, MutationMatrix
from wfapprox.testfuncs import TestFunction, standard_family_r2

import oracles


def poly(*coeffs):
    return TestFunction.univariate(list(coeffs))


def test_grid_validation_and_alignment():
    with pytest.raises(DomainError):
        pde1d.Grid1D(M=32)
    with pytest.raises(DomainError):
        pde1d.Grid1D(theta=0.3)
    g = pde1d.Grid1D(M=200).aligned_to(24)
    assert g.M == 216 and g.coarsened().M == 108
    assert pde1d.Grid1D(M=1024).aligned_to(16).M == 1024


def test_constant_is_invariant():
    sol = pde1d.solve_backward(poly(2.5), 10, 0.1, 0.2, 5.0, pde1d.Grid1D(M=128, dt=0.01))
    np.testing.assert_allclose(sol.values, 2.5, atol=1e-12)


def test_generator_rows_sum_to_zero():
    L = pde1d.generator_matrix(7, 0.1, 0.3, 64)
    np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-9)


def test_linear_closed_form():
    for u12, u21 in [(0.0, 0.0), (0.05, 0.05), (0.3, 0.1)]:
        s = u12 + u21
        x = np.linspace(0, 1, 1025)
        sol = pde1d.solve_backward(poly(0, 1), 10, u12, u21, 10.0, pde1d.Grid1D(M=1024))
        for t in (1.0, 5.0, 10.0):
            xinf = u21 / s if s else 0.0
            exact = xinf + (x - xinf) * math.exp(-s * t) if s else x
            assert np.abs(sol.at(t) - exact).max() <= 1e-6


@pytest.mark.parametrize("u12,u21", [(0.0, 0.0), (0.05, 0.05), (0.2, 0.02)])
def test_matches_moment_closure(u12, u21):
    N, T = 10, 5.0
    sol = pde1d.solve_backward(list(standard_family_r2()), N, u12, u21, T, pde1d.Grid1D(M=1024))
    for k, f in enumerate(standard_family_r2()):
        for j in (0, 100, 333, 512, 1024):
            x0 = sol.x[j]
            exact = oracles.diffusion_expectation(f.terms, [x0], [u21], [u12], N, T)
            assert abs(sol.at(T)[j, k] - exact) <= 2e-6


def test_second_order_convergence():
    f = poly(0, 0, 0, 0, 1)
    N, T = 5, 2.0
    errs = []
    for M in (128, 256, 512):
        sol = pde1d.solve_backward(f, N, 0.1, 0.1, T, pde1d.Grid1D(M=M, dt=0.002))
        exact = np.array([oracles.diffusion_expectation(f.terms, [x], [0.1], [0.1], N, T) for x in sol.x])
        errs.append(np.abs(sol.at(T) - exact).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.0) & (ratios < 5.0))


def test_maximum_principle():
    # at the default grid; coarse Crank-Nicolson grids can overshoot at truncation level
    rng = np.random.default_rng(0)
    x = np.linspace(0, 1, 100001)
    for _ in range(5):
        f = TestFunction.univariate(rng.normal(size=5))
        sol = pde1d.solve_backward(f, int(rng.integers(1, 40)), *rng.uniform(0, 0.3, 2), 10.0)
        assert np.abs(sol.values).max() <= np.abs(f(x)).max() + 1e-8


def test_agrees_with_diffusion_monte_carlo():
    f = standard_family_r2()[3]
    N, u12, u21, x0, t = 10, 0.05, 0.05, 0.3, 5.0
    grid = pde1d.Grid1D(M=1000)
    sol = pde1d.solve_backward(f, N, u12, u21, t, grid)
    cfg = dif.DiffusionConfig(N, MutationMatrix.two_allele(u12, u21))
    mean, se = dif.weak_expectation(f, [x0], cfg, t, 2**18, seed=3)
    assert abs(sol.at(t)[300] - mean) <= 4 * se + 1e-4  # Euler bias at dt = 1/64


def test_solver_validation():
    f = poly(0, 1)
    with pytest.raises(DomainError):
        pde1d.solve_backward(f, 5, 0.1, 0.1, 0.0)
    with pytest.raises(DomainError):
        pde1d.solve_backward(f, 5, 1.5, 0.1, 1.0)
    with pytest.raises(DomainError):
        pde1d.solve_backward(f, 5, 0.1, 0.1, 1.0, pde1d.Grid1D(dt=0.3))
    with pytest.raises(DomainError):
        pde1d.solve_backward(f, 5, 0.1, 0.1, 1.0).at(0.5)


def test_richardson_slack_bounds_true_error():
    f = poly(0, 0, 0, 1)
    N, T = 5, 3.0
    grid = pde1d.Grid1D(M=256, dt=0.004)
    fine, slack = pde1d.richardson_slack(f, N, 0.1, 0.2, T, grid)
    exact = np.array([oracles.diffusion_expectation(f.terms, [x], [0.2], [0.1], N, T) for x in fine.x[::2]])
    err = np.abs(fine.at(T)[::2] - exact)
    assert np.all(err <= 2 * slack[-1])
    assert np.all(slack[0] == 0) and slack[1:].min() > 0


@pytest.mark.parametrize("u12,u21", [(0.0, 0.0), (0.05, 0.05), (0.3, 0.1)])
def test_first_derivative_decay_is_sharp_for_linear(u12, u21):
    rep = pde1d.derivative_decay_check(poly(0, 1), 1, 10, u12, u21, 10.0)
    for row in rep:
        assert row["sup_derivative"] == pytest.approx(math.exp(-(u12 + u21) * row["t"]), abs=1e-5)
        assert row["margin"] >= 0


def test_second_derivative_decay():
    u12 = u21 = 0.05
    N = 10
    rep = pde1d.derivative_decay_check(poly(0, 0, 1), 2, N, u12, u21, 10.0)
    assert all(row["margin"] >= 0 for row in rep)
    lam2 = corollary_rates(u12, u21, N)[1]
    assert pde1d.decay_rate_fit(rep) == pytest.approx(lam2, abs=1e-3)
    rep4 = pde1d.derivative_decay_check(standard_family_r2()[3], 2, N, u12, u21, 10.0)
    assert all(row["margin"] >= 0 for row in rep4)
    assert pde1d.decay_rate_fit(rep4, t_min=5.0) >= lam2 - 1e-3
    with pytest.raises(DomainError):
        pde1d.derivative_decay_check(poly(0, 1), 5, N, u12, u21, 1.0)


def test_pde_chain_gap_examples():
    f = poly(0, 0, 1)
    N, u12, u21 = 5, 0.1, 0.1
    gap = pde1d.pde_chain_gap(f, [0.3], N, u12, u21, 3)
    U = MutationMatrix.two_allele(u12, u21)
    chain_val = chain_expectation(f, [3], U, 3, N=N)
    diff_val = oracles.diffusion_expectation(f.terms, [0.3], [u21], [u12], N, 3.0)
    assert gap == pytest.approx(abs(chain_val - diff_val), abs=1e-8)
    # both processes are martingales without mutation
    assert pde1d.pde_chain_gap(poly(0, 1), 4, N, 0.0, 0.0, 2) <= 1e-12
    assert pde1d.pde_chain_gap(poly(1.5), 4, N, u12, u21, 2) <= 1e-12


def test_lattice_values_shapes_and_n_zero():
    fs = standard_family_r2()[:2]
    vals, slack = pde1d.pde_lattice_values(fs, 4, 0.1, 0.1, [0, 2])
    assert vals.shape == slack.shape == (2, 2, 9)
    np.testing.assert_allclose(vals[1, 0], (np.arange(9) / 8) ** 2)
    assert np.all(slack[:, 0] == 0)


def test_exports(tmp_path):
    grid = pde1d.Grid1D(M=128, dt=0.01)
    sol = pde1d.solve_backward(poly(0, 1), 5, 0.1, 0.1, 2.0, grid)
    sol.to_csv(tmp_path / "F.csv")
    lines = (tmp_path / "F.csv").read_text().splitlines()
    assert lines[0] == "t,x,F" and len(lines) == 1 + 3 * 129
    rep = pde1d.derivative_decay_check(poly(0, 1), 1, 5, 0.1, 0.1, 2.0, grid)
    pde1d.decay_report_json({1: rep}, tmp_path / "d.json")
    data = json.loads((tmp_path / "d.json").read_text())
    assert set(data["1"][0]) >= {"t", "sup_derivative", "bound", "margin"}
