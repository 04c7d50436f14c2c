import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr, ndtri
from sklearn.base import clone

from ancova_pce import (DependenceModel, InputError, IsoTransformer, MarginalModel, NumericalError,
                        fictive_correlation, make_transform, nataf_forward, nataf_inverse,
                        rosenblatt_forward, rosenblatt_inverse, sample_correlated)

MIXED = [MarginalModel.uniform(0, 2), MarginalModel.lognormal(0, 0.5), MarginalModel.beta(2, 3)]


def test_fictive_normal_pair_unchanged():
    R = fictive_correlation([MarginalModel.normal()] * 2, [[1, 0.5], [0.5, 1]])
    assert R[0, 1] == 0.5


def test_fictive_zero_target_unchanged():
    R = fictive_correlation(MIXED, np.eye(3))
    np.testing.assert_array_equal(R, np.eye(3))


def test_fictive_uniform_closed_form():
    R = fictive_correlation([MarginalModel.uniform()] * 2, [[1, 0.5], [0.5, 1]])
    assert R[0, 1] == pytest.approx(2 * math.sin(math.pi * 0.5 / 6), abs=1e-6)


def test_fictive_lognormal_closed_form():
    s = 0.8
    rho0 = 0.6
    target = (math.exp(rho0 * s * s) - 1) / (math.exp(s * s) - 1)
    R = fictive_correlation([MarginalModel.lognormal(0, s)] * 2, [[1, target], [target, 1]])
    assert R[0, 1] == pytest.approx(rho0, abs=1e-6)


def test_fictive_infeasible_target():
    with pytest.raises(NumericalError) as err:
        fictive_correlation([MarginalModel.lognormal(0, 1)] * 2, [[1, -0.9], [-0.9, 1]])
    assert "attainable" in err.value.diagnostics


@settings(max_examples=15, deadline=None)
@given(r1=st.floats(-0.9, 0.9), r2=st.floats(-0.9, 0.9))
def test_fictive_monotone(r1, r2):
    lo, hi = sorted((r1, r2))
    mg = [MarginalModel.uniform(), MarginalModel.beta(2, 3)]
    f = [fictive_correlation(mg, [[1, r], [r, 1]])[0, 1] for r in (lo, hi)]
    assert f[0] <= f[1] + 1e-12


def test_nataf_gaussian_independent_is_standardization():
    mg = [MarginalModel.normal(1, 2), MarginalModel.normal(-3, 0.5)]
    t = make_transform("nataf", mg, DependenceModel.independent(2))
    Z = np.random.default_rng(0).normal(size=(50, 2)) * [2, 0.5] + [1, -3]
    np.testing.assert_allclose(nataf_forward(Z, t), (Z - [1, -3]) / [2, 0.5], atol=1e-12)


@pytest.mark.parametrize("kind", ["nataf", "rosenblatt"])
def test_round_trip_physical(kind):
    dep = DependenceModel.equicorrelated(3, 0.5, MIXED)
    t = make_transform(kind, MIXED, dep)
    Z = sample_correlated(MIXED, dep, 2000, seed=1)
    np.testing.assert_allclose(t.inverse_transform(t.transform(Z)), Z, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("kind", ["nataf", "rosenblatt"])
def test_round_trip_standard(kind):
    dep = DependenceModel.equicorrelated(3, 0.5, MIXED)
    t = make_transform(kind, MIXED, dep)
    U = np.random.default_rng(2).normal(size=(2000, 3))
    U = U[np.all(np.abs(U) < 3.29, axis=1)]  # central 99.9 %
    np.testing.assert_allclose(t.transform(t.inverse_transform(U)), U, atol=1e-6)


def test_gaussian_round_trip_tight():
    mg = [MarginalModel.normal()] * 2
    t = make_transform("nataf", mg, DependenceModel.equicorrelated(2, 0.5))
    Z = np.random.default_rng(3).normal(size=(500, 2))
    np.testing.assert_allclose(nataf_inverse(nataf_forward(Z, t), t), Z, atol=1e-10)


def test_identity_copula_inverse_is_componentwise():
    t = make_transform("nataf", MIXED, DependenceModel.independent(3))
    U = np.random.default_rng(4).normal(size=(20, 3))
    expected = np.column_stack([m.icdf(ndtr(U[:, j])) for j, m in enumerate(MIXED)])
    np.testing.assert_allclose(nataf_inverse(U, t), expected, rtol=1e-12)


def test_nataf_decorrelates():
    dep = DependenceModel.equicorrelated(2, 0.8)
    mg = [MarginalModel.normal()] * 2
    U = make_transform("nataf", mg, dep).transform(sample_correlated(mg, dep, 100_000, seed=5))
    assert abs(np.corrcoef(U.T)[0, 1]) < 0.01


def test_rosenblatt_independent_is_probit():
    t = make_transform("rosenblatt", MIXED, DependenceModel.independent(3))
    Z = sample_correlated(MIXED, None, 100, seed=6)
    expected = np.column_stack([ndtri(m.cdf(Z[:, j])) for j, m in enumerate(MIXED)])
    np.testing.assert_allclose(rosenblatt_forward(Z, t), expected, atol=1e-12)


def test_rosenblatt_two_dim_formula():
    rho = 0.6
    mg = [MarginalModel.uniform(), MarginalModel.lognormal(0, 0.5)]
    dep = DependenceModel(np.array([[1, rho], [rho, 1]]))
    t = make_transform("rosenblatt", mg, dep)
    Z = sample_correlated(mg, dep, 500, seed=7)
    y1, y2 = ndtri(mg[0].cdf(Z[:, 0])), ndtri(mg[1].cdf(Z[:, 1]))
    U = rosenblatt_forward(Z, t)
    np.testing.assert_allclose(U[:, 0], y1, atol=1e-12)
    np.testing.assert_allclose(U[:, 1], (y2 - rho * y1) / math.sqrt(1 - rho * rho), atol=1e-12)
    np.testing.assert_allclose(rosenblatt_inverse(U, t), Z, rtol=1e-9)


def test_natural_order_rosenblatt_equals_nataf():
    dep = DependenceModel.equicorrelated(3, 0.4, MIXED)
    Z = sample_correlated(MIXED, dep, 1000, seed=8)
    a = make_transform("nataf", MIXED, dep).transform(Z)
    b = make_transform("rosenblatt", MIXED, dep).transform(Z)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_rosenblatt_ordering_changes_map_but_decorrelates():
    dep = DependenceModel.equicorrelated(3, 0.6, MIXED)
    M = 40_000
    Z = sample_correlated(MIXED, dep, M, seed=9)
    natural = make_transform("rosenblatt", MIXED, dep).transform(Z)
    t = make_transform("rosenblatt", MIXED, dep, ordering=[2, 0, 1])
    U = t.transform(Z)
    assert np.abs(U - natural).max() > 0.1
    off = np.corrcoef(U.T) - np.eye(3)
    assert np.abs(off).max() < 5 / math.sqrt(M)
    np.testing.assert_allclose(t.inverse_transform(U), Z, rtol=1e-6, atol=1e-9)


def test_bad_ordering_rejected():
    with pytest.raises(InputError):
        make_transform("rosenblatt", MIXED, DependenceModel.independent(3), ordering=[0, 0, 1])


def test_clipping_counted_and_warned():
    t = make_transform("nataf", [MarginalModel.uniform()] * 2, DependenceModel.independent(2))
    with pytest.warns(RuntimeWarning, match="clipped"):
        U = t.transform(np.array([[1.5, 0.5], [-0.2, 0.5], [0.5, 0.5]]))
    assert t.n_clipped_ == 2
    assert np.all(np.isfinite(U))


def test_row_independence():
    dep = DependenceModel.equicorrelated(3, 0.3, MIXED)
    t = make_transform("nataf", MIXED, dep)
    Z = sample_correlated(MIXED, dep, 300, seed=10)
    full = t.transform(Z)
    assert full.shape == Z.shape
    np.testing.assert_array_equal(t.transform(Z[7:19]), full[7:19])


def test_sklearn_estimator_protocol():
    t = IsoTransformer("nataf", marginal_kind="normal")
    assert clone(t).get_params()["kind"] == "nataf"
    Z = sample_correlated([MarginalModel.normal()] * 2, DependenceModel.equicorrelated(2, 0.7), 20_000, seed=11)
    U = t.fit_transform(Z)
    assert abs(np.corrcoef(U.T)[0, 1]) < 0.02
    with pytest.raises(InputError):
        t.transform(np.zeros((3, 5)))


def test_unknown_kind_rejected():
    with pytest.raises(InputError):
        IsoTransformer("copula", MIXED, DependenceModel.independent(3)).fit()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_transform("identity", MIXED, DependenceModel.independent(3))
