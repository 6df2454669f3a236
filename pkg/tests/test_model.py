import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfapprox.chain import enumerated_moments
from wfapprox.model import (
    DomainError,
    LatticeState,
    MutationMatrix,
    adjusted_frequencies,
    as_simplex_point,
    b_star,
    boundary_conditions_check,
    covariance,
    covariance_hs_sup_grid,
    drift,
    drift_norm_sup,
    lattice_states,
    num_lattice_states,
    one_step_moments,
    simplex_grid,
    sup_covariance_hs,
    u_star,
)

import oracles


def rates(r, max_rate=0.2):
    return st.lists(st.floats(0, max_rate), min_size=2 * (r - 1), max_size=2 * (r - 1))


def point_in_simplex(d):
    return st.lists(st.floats(0, 1), min_size=d + 1, max_size=d + 1).filter(lambda w: sum(w) > 0).map(
        lambda w: np.array(w[:d]) / sum(w)
    )


# mutation matrices ----------------------------------------------------------


def test_from_rates_layout():
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    expected = [[0, 0.03, 0.01], [0.02, 0, 0.04], [0.02, 0.03, 0]]
    np.testing.assert_array_equal(U.u, expected)
    assert U.r == 3
    np.testing.assert_allclose(U.decay_rates, [0.04 + 0.02, 0.06 + 0.03])


def test_two_allele_convention():
    U = MutationMatrix.two_allele(0.2, 0.1)
    assert U.u[0, 1] == 0.2 and U.u[1, 0] == 0.1


def test_rejects_dependent_inflow():
    with pytest.raises(DomainError, match="source allele"):
        MutationMatrix.from_matrix([[0, 0.1, 0.1], [0.2, 0, 0.1], [0.1, 0.1, 0]])


@pytest.mark.parametrize("u", [
    [[0.1, 0.1], [0.1, 0]],          # nonzero diagonal
    [[0, -0.1], [0.1, 0]],           # negative
    [[0, np.nan], [0.1, 0]],         # not finite
    [[0, 0.6, 0.6], [0.3, 0, 0.3], [0.3, 0.6, 0]],  # row sum > 1
])
def test_rejects_invalid(u):
    with pytest.raises(DomainError):
        MutationMatrix.from_matrix(u)


def test_immutable():
    U = MutationMatrix.two_allele(0.1, 0.1)
    with pytest.raises(ValueError):
        U.u[0, 1] = 0.5


# simplex and lattice --------------------------------------------------------


def test_simplex_tolerance():
    np.testing.assert_array_equal(as_simplex_point([-1e-13, 0.5]), [0.0, 0.5])
    with pytest.raises(DomainError):
        as_simplex_point([-1e-9, 0.5])
    with pytest.raises(DomainError):
        as_simplex_point([0.6, 0.5])


def test_lattice_state_point_is_exact_ratio():
    s = LatticeState((1, 2), 3)
    assert s.point.tolist() == [1 / 6, 2 / 6]
    assert LatticeState.from_point([1 / 6, 1 / 3], 3) == s
    with pytest.raises(DomainError):
        LatticeState((4, 3), 3)
    with pytest.raises(DomainError):
        LatticeState.from_point([0.1, 0.2], 3)


def test_lattice_enumeration_order_and_size():
    s = lattice_states(1, 3)
    # colexicographic: the last coordinate varies slowest
    assert s.tolist() == [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [0, 2]]
    for N, r in [(2, 2), (3, 3), (2, 4)]:
        assert len(lattice_states(N, r)) == num_lattice_states(N, r) == math.comb(2 * N + r - 1, r - 1)
        assert len({tuple(x) for x in lattice_states(N, r)}) == num_lattice_states(N, r)


# adjusted frequencies and drift ---------------------------------------------


def test_adjusted_identity_cases():
    y = [0.3, 0.2]
    np.testing.assert_array_equal(adjusted_frequencies(y, MutationMatrix.zero(3)), y)
    assert adjusted_frequencies([0.5], MutationMatrix.two_allele(0.1, 0.1))[0] == pytest.approx(0.5, abs=1e-15)


def test_adjusted_hand_value():
    u = oracles.full_matrix([0.02, 0.03], [0.01, 0.04])
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    # y = e_1: allele 1 keeps 1 - 0.04, sends 0.03 to allele 2
    np.testing.assert_allclose(adjusted_frequencies([1, 0], U), [0.96, 0.03], atol=1e-15)
    np.testing.assert_allclose(adjusted_frequencies([1, 0], U), oracles.adjusted_scalar([1, 0], u), atol=1e-15)


def test_adjusted_strictly_interior_with_positive_rates():
    U = MutationMatrix.from_rates([0.05, 0.02], [0.03, 0.01])
    for v in [[0, 0], [1, 0], [0, 1]]:
        p = adjusted_frequencies(v, U)
        assert np.all(p > 0) and p.sum() < 1


@pytest.mark.parametrize("r", [2, 3, 4, 5])
def test_adjusted_maps_into_simplex(r):
    rng = np.random.default_rng(r)
    for _ in range(1000):
        U = MutationMatrix.from_rates(rng.uniform(0, 1 / r, r - 1), rng.uniform(0, 1 / r, r - 1))
        y = rng.dirichlet(np.ones(r))[:-1]
        p = adjusted_frequencies(y, U)
        assert np.all(p >= 0) and p.sum() <= 1 + 1e-15
        np.testing.assert_allclose(p - y, drift(y, U), atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(rates(3), point_in_simplex(2))
def test_drift_matches_scalar_formula(rs, x):
    U = MutationMatrix.from_rates(rs[:2], rs[2:])
    u = oracles.full_matrix(rs[:2], rs[2:])
    np.testing.assert_allclose(drift(x, U), oracles.drift_scalar(list(x), u), atol=1e-15)


def test_drift_hand_values():
    assert drift([0.0], MutationMatrix.two_allele(0.3, 0.1))[0] == pytest.approx(0.1)
    np.testing.assert_array_equal(drift([0.2, 0.3], MutationMatrix.zero(3)), [0, 0])


# covariance and its supremum ------------------------------------------------


def test_covariance_values():
    np.testing.assert_array_equal(covariance([0.0, 1.0]), np.zeros((2, 2)))
    np.testing.assert_allclose(covariance([0.5]), [[0.25]])
    np.testing.assert_allclose(covariance([1 / 3, 1 / 3]), [[2 / 9, -1 / 9], [-1 / 9, 2 / 9]])


@pytest.mark.parametrize("r", [2, 3, 4, 5])
def test_covariance_psd(r):
    x = np.random.default_rng(0).dirichlet(np.ones(r), 2000)[:, :-1]
    A = covariance(x)
    np.testing.assert_array_equal(A, np.swapaxes(A, -1, -2))
    assert np.linalg.eigvalsh(A).min() >= -1e-12


def test_sup_covariance_closed_form():
    assert sup_covariance_hs(3) == pytest.approx(0.5)
    assert sup_covariance_hs(4) == pytest.approx(math.sqrt(2) / 3)
    with pytest.raises(DomainError):
        sup_covariance_hs(2)


@pytest.mark.parametrize("r", [3, 4, 5])
def test_closed_form_is_the_barycentre_value(r):
    y = np.full(r - 1, 1 / (r - 1))
    assert np.linalg.norm(covariance(y)) == pytest.approx(sup_covariance_hs(r), abs=1e-14)


@pytest.mark.parametrize("r", [3, 4, 5])
def test_true_hs_supremum_is_one_half(r):
    # two coordinates at 1/2 give ||A||_HS = 1/2 for every r >= 3
    value, _ = covariance_hs_sup_grid(r, 40)
    assert value == pytest.approx(0.5, abs=1e-12)
    pts = simplex_grid(r - 1, 12)
    assert np.linalg.norm(covariance(pts), axis=(-2, -1)).max() <= 0.5 + 1e-12


# b*, u* --------------------------------------------------------------------


def test_b_star_and_u_star_basic():
    assert b_star(MutationMatrix.zero(3)) == (0.0, 0)
    assert u_star(MutationMatrix.zero(4)) == 0.0
    U = MutationMatrix.two_allele(0.2, 0.1)
    assert b_star(U)[0] == pytest.approx(0.2)
    assert u_star(U) == pytest.approx(0.3)
    x = np.linspace(0, 1, 2001)[:, None]
    assert np.abs(drift(x, U)).max() == pytest.approx(0.2)


def test_u_star_enumeration():
    U = MutationMatrix.from_rates([0.01, 0.02], [0.03, 0.0])
    u = U.u
    expected = max(sum(u[k]) + u[2, k] for k in range(2))
    assert u_star(U) == pytest.approx(expected)


def test_i_star_ties_pick_smallest():
    U = MutationMatrix.from_rates([0.05, 0.05, 0.05], [0.02, 0.02, 0.02])
    assert b_star(U)[1] == 0


def test_drift_norm_sup_dominates_grid():
    rng = np.random.default_rng(3)
    grid = simplex_grid(2, 100)
    for _ in range(50):
        U = MutationMatrix.random(3, rng)
        exact, _ = drift_norm_sup(U)
        grid_max = np.linalg.norm(drift(grid, U), axis=-1).max()
        assert grid_max <= exact + 1e-15
        assert grid_max == pytest.approx(exact, abs=1e-15)  # vertices are grid points


def test_b_star_equals_drift_at_its_vertex():
    rng = np.random.default_rng(4)
    for _ in range(20):
        U = MutationMatrix.random(4, rng)
        value, i = b_star(U)
        e = np.eye(3)[i]
        assert value == pytest.approx(np.linalg.norm(drift(e, U)), abs=1e-15)


# one-step moments ------------------------------------------------------------


def test_moments_trivial_cases():
    U = MutationMatrix.zero(3)
    for out in one_step_moments([1.0, 0.0], U, 2):
        np.testing.assert_array_equal(out, 0)
    third = one_step_moments([0.5], MutationMatrix.zero(2), 2)[2]
    assert third[0] == pytest.approx(0.0, abs=1e-17)
    with pytest.raises(DomainError):
        one_step_moments([0.3], U, 2)


@pytest.mark.parametrize("r", [2, 3, 4])
def test_moments_match_factorial_enumeration(r):
    rng = np.random.default_rng(10 + r)
    for _ in range(3):
        lr, of = rng.uniform(0, 0.1, r - 1), rng.uniform(0, 0.1, r - 1)
        U = MutationMatrix.from_rates(lr, of)
        u = oracles.full_matrix(list(lr), list(of))
        for N in (1, 2, 3, 4):
            for alpha in oracles.states(N, r):
                ref = oracles.enumerated_moments(alpha, u, N)
                got = one_step_moments(np.array(alpha) / (2 * N), U, N)
                for a, b in zip(got, ref):
                    np.testing.assert_allclose(a, b, atol=1e-12)


def test_package_enumeration_matches_factorial_enumeration():
    U = MutationMatrix.from_rates([0.03, 0.05], [0.02, 0.01])
    u = oracles.full_matrix([0.03, 0.05], [0.02, 0.01])
    for alpha in oracles.states(2, 3):
        for a, b in zip(enumerated_moments(alpha, U, 2), oracles.enumerated_moments(alpha, u, 2)):
            np.testing.assert_allclose(a, b, atol=1e-14)


# boundary conditions ------------------------------------------------------


def test_boundary_face_examples():
    U = MutationMatrix.from_rates([0.02, 0.03], [0.01, 0.04])
    dn, bn = boundary_conditions_check([0.0, 0.4], 0, U, 5)
    assert dn == 0.0
    # normal drift on x_1 = 0 is sum_j x_j u_j1
    assert bn == pytest.approx(0.4 * 0.02 + 0.6 * 0.02)
    dn, bn = boundary_conditions_check([0.3, 0.7], 2, U, 5)
    assert abs(dn) <= 1e-12 and bn >= 0
    with pytest.raises(DomainError):
        boundary_conditions_check([0.1, 0.4], 0, U, 5)
    with pytest.raises(DomainError):
        boundary_conditions_check([0.0, 0.4], 3, U, 5)


@pytest.mark.parametrize("r", [3, 4])
def test_boundary_sweep(r):
    from wfapprox.certify import face_points

    rng = np.random.default_rng(r)
    U = MutationMatrix.random(r, rng)
    for face in range(r):
        for x in face_points(face, r, 100, rng):
            dn, bn = boundary_conditions_check(x, face, U, 7)
            assert abs(dn) <= 1e-12 and bn >= -1e-12
