import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermeval

from ancova_pce import (BasisSet, DependenceModel, InputError, MarginalModel, NumericalError, UnivariateBasis,
                        build_univariate_basis, evaluate_basis, sample_correlated, total_degree_count,
                        total_degree_indices)


def _uniform_moments(n):
    return np.array([1.0 / (k + 1) if k % 2 == 0 else 0.0 for k in range(n)])


def test_hermite_recurrence_from_normal_moments():
    u = build_univariate_basis([1, 0, 1, 0, 3, 0, 15], 3)
    np.testing.assert_allclose(u.a, 0.0, atol=1e-12)
    np.testing.assert_allclose(u.b, [1, 1, 2, 3], rtol=1e-10)


def test_legendre_recurrence_from_uniform_moments():
    u = build_univariate_basis(_uniform_moments(5), 2)
    np.testing.assert_allclose(u.a, 0.0, atol=1e-12)
    k = np.arange(1, 3)
    np.testing.assert_allclose(u.b[1:], k**2 / (4.0 * k**2 - 1), rtol=1e-10)


def test_unnormalized_moments_rejected():
    with pytest.raises(InputError):
        build_univariate_basis([2, 0, 2], 1)


def test_too_few_moments_rejected():
    with pytest.raises(InputError):
        build_univariate_basis([1, 0, 1], 2)


def test_invalid_moment_sequence_raises():
    with pytest.raises(NumericalError):
        build_univariate_basis([1, 0, -1], 1)


def test_singular_hankel_reduces_degree_with_warning():
    # two-point measure at +-1 supports polynomials up to degree 1 only
    with pytest.warns(RuntimeWarning, match="reduced from 2 to 1"):
        u = build_univariate_basis([1, 0, 1, 0, 1], 2)
    assert u.degree == 1


@pytest.mark.parametrize("p", range(6))
def test_hermite_evaluation_matches_closed_form(p):
    u = UnivariateBasis.from_marginal(MarginalModel.normal(), 5)
    z = np.linspace(-6, 6, 241)
    coef = np.zeros(p + 1)
    coef[p] = 1.0 / math.sqrt(math.factorial(p))
    expected = hermeval(z, coef)
    got = u.evaluate(z)[:, p]
    np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


def test_phi0_is_one_and_spec_round_trip():
    u = UnivariateBasis.from_marginal(MarginalModel.beta(2, 3, 1, 4), 4)
    x = np.linspace(1, 4, 11)
    np.testing.assert_array_equal(u.evaluate(x)[:, 0], 1.0)
    back = UnivariateBasis.from_spec(u.to_spec())
    np.testing.assert_array_equal(back.evaluate(x), u.evaluate(x))


def test_construction_sample_gram_is_identity():
    x = np.random.default_rng(0).gamma(3.0, size=400)
    u = UnivariateBasis.from_samples(x, 4)
    P = u.evaluate(x)
    G = P.T @ P / x.size
    assert np.abs(G - np.eye(5)).max() < 5e-3


def test_total_degree_small_enumeration():
    np.testing.assert_array_equal(total_degree_indices(2, 1), [[0, 0], [1, 0], [0, 1]])
    assert total_degree_indices(6, 2).shape == (28, 6)
    assert total_degree_indices(120, 2).shape == (7381, 120)


def _count_dp(D, p):
    # number of weak compositions with |k| <= p, by dynamic programming
    ways = [1] + [0] * p
    for _ in range(D):
        ways = list(np.cumsum(ways))
    return int(sum(ways))


@pytest.mark.parametrize("D", [1, 2, 7, 64, 130])
@pytest.mark.parametrize("p", range(6))
def test_total_degree_count_formula(D, p):
    assert total_degree_count(D, p) == _count_dp(D, p) == math.comb(D + p, p)


@settings(max_examples=40, deadline=None)
@given(D=st.integers(1, 130), p=st.integers(0, 5))
def test_total_degree_indices_properties(D, p):
    if total_degree_count(D, p) > 100_000:
        return  # enumeration of the largest sets is memory-bound; counts are covered above
    idx = total_degree_indices(D, p)
    assert idx.shape == (math.comb(D + p, p), D)
    assert not idx[0].any()
    deg = idx.sum(axis=1)
    assert deg.max(initial=0) <= p
    assert np.all(np.diff(deg) >= 0)
    assert np.unique(idx, axis=0).shape[0] == idx.shape[0]


def test_evaluate_basis_constant_and_linear_columns():
    h = UnivariateBasis.from_marginal(MarginalModel.normal(), 2)
    basis = BasisSet.total_degree([h, h], 2)
    pts = np.random.default_rng(1).normal(size=(9, 2))
    Psi = evaluate_basis(basis, pts)
    np.testing.assert_array_equal(Psi[:, 0], 1.0)
    np.testing.assert_allclose(Psi[:, 1], pts[:, 0], rtol=1e-15)
    assert np.all(np.isfinite(Psi))


def test_evaluate_basis_dimension_mismatch():
    h = UnivariateBasis.from_marginal(MarginalModel.normal(), 1)
    with pytest.raises(InputError):
        BasisSet.total_degree([h, h], 1).evaluate(np.zeros((3, 3)))


def test_basis_set_validation():
    h = UnivariateBasis.from_marginal(MarginalModel.normal(), 2)
    with pytest.raises(InputError):
        BasisSet([h, h], [[1, 0], [0, 0]])
    with pytest.raises(InputError):
        BasisSet([h, h], [[0, 0], [1, 0], [1, 0]])
    with pytest.raises(InputError):
        BasisSet([h, h], [[0, 0], [3, 0]])


def test_parallel_evaluation_matches_serial():
    mg = [MarginalModel.uniform(), MarginalModel.lognormal(0, 0.4), MarginalModel.normal()]
    basis = BasisSet.total_degree([UnivariateBasis.from_marginal(m, 3) for m in mg], 3)
    X = sample_correlated(mg, None, 30_000, seed=2)
    assert basis.evaluate(X, n_jobs=1).tobytes() == basis.evaluate(X, n_jobs=4).tobytes()


@pytest.mark.parametrize("kind", ["normal", "uniform", "lognormal"])
def test_multivariate_gram_converges(kind):
    m = {"normal": MarginalModel.normal(), "uniform": MarginalModel.uniform(),
         "lognormal": MarginalModel.lognormal(0, 0.3)}[kind]
    basis = BasisSet.total_degree([UnivariateBasis.from_marginal(m, 2)] * 2, 2)
    X = sample_correlated([m, m], DependenceModel.independent(2), 200_000, seed=3)
    Psi = basis.evaluate(X)
    assert np.abs(Psi.T @ Psi / X.shape[0] - np.eye(basis.size)).max() <= 0.05
