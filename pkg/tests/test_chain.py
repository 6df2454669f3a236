import numpy as np
import pytest
from scipy import stats

from wfapprox import chain
from wfapprox.model import DomainError, LatticeState, MutationMatrix, adjusted_frequencies, drift, one_step_moments
from wfapprox.testfuncs import TestFunction

import oracles


def test_vertex_is_absorbing_without_mutation():
    U = MutationMatrix.zero(3)
    assert chain.transition_probability((4, 0), (4, 0), U, 2) == 1.0
    assert chain.transition_probability((4, 0), (3, 1), U, 2) == 0.0


def test_binomial_by_hand():
    U = MutationMatrix.zero(2)
    probs = [chain.transition_probability([1], [k], U, 1) for k in range(3)]
    np.testing.assert_allclose(probs, [0.25, 0.5, 0.25], atol=1e-15)


def test_mismatched_population():
    U = MutationMatrix.zero(2)
    with pytest.raises(DomainError):
        chain.transition_probability(LatticeState((1,), 1), LatticeState((1,), 2), U)


@pytest.mark.parametrize("r", [2, 3, 4])
def test_transition_matrix_matches_factorial_oracle(r):
    rng = np.random.default_rng(r)
    lr, of = rng.uniform(0, 0.1, r - 1), rng.uniform(0, 0.1, r - 1)
    U = MutationMatrix.from_rates(lr, of)
    for N in (1, 2, 3):
        sts, P_ref = oracles.transition_matrix(oracles.full_matrix(list(lr), list(of)), N)
        order = [chain.state_index(s, N, r) for s in sts]
        P = chain.transition_matrix(U, N)
        np.testing.assert_allclose(P[np.ix_(order, order)], P_ref, atol=1e-14)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_evolve_zero_steps_and_absorption():
    U = MutationMatrix.zero(3)
    init = chain.ChainDistribution.point_mass((6, 0), 3)
    assert np.array_equal(chain.evolve_distribution(init, U, 0).probs, init.probs)
    assert np.array_equal(chain.evolve_distribution(init, U, 7).probs, init.probs)


def test_evolve_matches_matrix_power():
    U = MutationMatrix.two_allele(0.1, 0.1)
    init = chain.ChainDistribution.point_mass([1], 2)
    _, P = oracles.transition_matrix(oracles.full_matrix([0.1], [0.1]), 2)
    ref = np.eye(5)[1] @ np.linalg.matrix_power(P, 2)
    np.testing.assert_allclose(chain.evolve_distribution(init, U, 2).probs, ref, atol=1e-15)


def test_mass_conserved_long_run():
    U = MutationMatrix.from_rates([0.02, 0.01], [0.03, 0.02])
    dist = chain.evolve_distribution(chain.ChainDistribution.point_mass((2, 5), 4), U, 1000)
    assert dist.mass == pytest.approx(1.0, abs=1e-10)
    assert np.all(dist.probs >= 0)


def test_chunked_pushforward_matches_dense():
    U = MutationMatrix.from_rates([0.02, 0.01], [0.03, 0.02])
    init = chain.ChainDistribution.point_mass((3, 2), 5)
    dense = chain.evolve_distribution(init, U, 3).probs
    p = init.probs
    for _ in range(3):
        p = chain._pushforward_chunked(p, U, 5, chunk=7)
    np.testing.assert_allclose(p, dense, atol=1e-15)


def test_capacity_error():
    init = chain.ChainDistribution.point_mass((3, 3), 5)
    with pytest.raises(chain.CapacityError, match="Monte Carlo"):
        chain.evolve_distribution(init, MutationMatrix.zero(3), 1, cap=10)


def test_expectations():
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    assert chain.chain_expectation(TestFunction.constant(3, 2.5), (2, 3), U, 4, N=4) == pytest.approx(2.5)
    lin = TestFunction.linear(3, [1.0, -2.0], 0.3)
    x = np.array([2, 3]) / 8
    expected = lin(x) + np.dot([1.0, -2.0], drift(x, U))
    assert chain.chain_expectation(lin, (2, 3), U, 1, N=4) == pytest.approx(expected, abs=1e-15)


def test_square_matches_matrix_power():
    U = MutationMatrix.two_allele(0.1, 0.1)
    f = TestFunction.univariate([0, 0, 1])
    _, P = oracles.transition_matrix(oracles.full_matrix([0.1], [0.1]), 2)
    ref = np.linalg.matrix_power(P, 3) @ (np.arange(5) / 4) ** 2
    for a in range(5):
        assert chain.chain_expectation(f, [a], U, 3, N=2) == pytest.approx(ref[a], abs=1e-12)
    all_ = chain.chain_expectations_all([f], U, 2, [0, 3])
    np.testing.assert_allclose(all_[0, 1], ref, atol=1e-12)


def test_exact_moment_identities():
    rng = np.random.default_rng(5)
    for r in (2, 3, 4):
        U = MutationMatrix.random(r, rng)
        for N in (1, 2, 3, 4):
            for alpha in chain.lattice_states(N, r):
                got = one_step_moments(alpha / (2 * N), U, N)
                ref = chain.enumerated_moments(alpha, U, N)
                for a, b in zip(got, ref):
                    np.testing.assert_allclose(a, b, atol=1e-12)


def test_sampler_vertex_and_determinism():
    U = MutationMatrix.zero(3)
    rng = np.random.default_rng(0)
    assert chain.sample_step(np.array([[10, 0]] * 5), U, 5, rng).tolist() == [[10, 0]] * 5
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    a = chain.sample_path((3, 4), U, 20, np.random.default_rng(9), N=5)
    b = chain.sample_path((3, 4), U, 20, np.random.default_rng(9), N=5)
    assert np.array_equal(a.states, b.states)
    assert a.states.shape == (21, 2)
    assert np.all(a.states.sum(axis=1) <= 10) and np.all(a.states >= 0)


def test_sampler_mean_and_covariance():
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    N, alpha = 5, np.array([3, 4])
    n = 10**6
    draws = chain.sample_step(np.broadcast_to(alpha, (n, 2)), U, N, np.random.default_rng(1)) / (2 * N)
    p = adjusted_frequencies(alpha / (2 * N), U)
    cov = (np.diag(p) - np.outer(p, p)) / (2 * N)
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(draws.mean(axis=0) - p) <= 4 * se)
    dev = draws - alpha / (2 * N)
    second = dev.T @ dev / n
    A_hat = one_step_moments(alpha / (2 * N), U, N)[1]
    # standard error of each second-moment entry from the fourth moments
    prods = dev[:, :, None] * dev[:, None, :]
    se2 = prods.reshape(n, -1).std(axis=0).reshape(2, 2) / np.sqrt(n)
    assert np.all(np.abs(second - A_hat) <= 4 * se2)


def test_sampler_goodness_of_fit():
    U = MutationMatrix.from_rates([0.1, 0.2], [0.15, 0.05])
    N, alpha = 2, (1, 2)
    n = 10**6
    draws = chain.sample_step(np.broadcast_to(alpha, (n, 2)), U, N, np.random.default_rng(2))
    states = chain.lattice_states(N, 3)
    idx = {tuple(s): k for k, s in enumerate(states.tolist())}
    counts = np.bincount([idx[tuple(d)] for d in draws.tolist()], minlength=len(states))
    expected = np.array([chain.transition_probability(alpha, s, U, N) for s in states]) * n
    keep = expected > 0
    _, pvalue = stats.chisquare(counts[keep], expected[keep] * counts[keep].sum() / expected[keep].sum())
    assert pvalue > 1e-4
    assert counts[~keep].sum() == 0


def test_chain_mc_agrees_with_exact():
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    f = TestFunction(3, {(2, 0): 1.0, (1, 1): 1.0})
    exact = chain.chain_expectation(f, (3, 3), U, 5, N=4)
    mean, se = chain.chain_expectation_mc(f, (3, 3), U, 5, 200_000, seed=3, N=4)
    assert abs(mean - exact) <= 4 * se
    with pytest.raises(DomainError):
        chain.chain_expectation_mc(f, (3, 3), U, 5, 1, seed=3, N=4)


def test_csv_exports(tmp_path):
    U = MutationMatrix.two_allele(0.1, 0.1)
    dist = chain.evolve_distribution(chain.ChainDistribution.point_mass([2], 2), U, 1)
    dist.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "alpha_1,prob" and len(lines) == 6
    path = chain.sample_path([2], U, 4, np.random.default_rng(0), N=2)
    path.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "n,alpha_1" and len(lines) == 6
