import csv
import io
import json
import logging
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ancova_pce import (AncovaReport, DependenceModel, InputError, MarginalModel, NumericalError, PCERegressor,
                        ancova_indices, extract_hdmr, make_benchmark, render_index_table, sample_correlated,
                        smooth_and_requantify, sobol_indices)
from ancova_pce.ancova import report_from_terms
from ancova_pce.benchmarks import _linear_indices


# -- HDMR extraction ---------------------------------------------------------
def _stub(idx, coef):
    return SimpleNamespace(multi_indices_=np.array(idx), coef_=np.array(coef, dtype=float))


def test_extract_hdmr_groups_by_support():
    terms = extract_hdmr(_stub([[0, 0], [1, 0], [0, 1], [2, 0], [1, 1]], [5, 1, 2, 3, 4]))
    assert [t.subset for t in terms] == [(0,), (1,), (0, 1)]
    assert terms[0].rows == (1, 3)
    np.testing.assert_array_equal(terms[0].coefficients, [1, 3])
    assert terms[2].order == 2


def test_extract_hdmr_constant_only():
    assert extract_hdmr(_stub([[0, 0, 0]], [1.0])) == []


def test_extract_hdmr_skips_zero_coefficients():
    terms = extract_hdmr(_stub([[0, 0], [1, 0], [0, 1]], [1, 0, 2]))
    assert [t.subset for t in terms] == [(1,)]


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_extract_hdmr_is_disjoint_cover(data):
    D = data.draw(st.integers(1, 5))
    rows = data.draw(st.lists(st.tuples(*[st.integers(0, 3)] * D), min_size=1, max_size=30, unique=True))
    idx = np.array(rows)
    coef = np.arange(1.0, len(rows) + 1)
    terms = extract_hdmr(_stub(idx, coef))
    covered = sorted(r for t in terms for r in t.rows)
    assert covered == [r for r in range(len(rows)) if idx[r].any()]
    for t in terms:
        for r in t.rows:
            assert tuple(np.nonzero(idx[r])[0]) == t.subset


# -- ANCOVA ------------------------------------------------------------------
def _linear_fit(strategy, a, rho, M_p=60, M_L=100_000, seed=0):
    mg = [MarginalModel.normal()] * len(a)
    dep = DependenceModel.equicorrelated(len(a), rho) if rho else DependenceModel.independent(len(a))
    Z = sample_correlated(mg, dep, M_p, seed)
    m = PCERegressor(strategy, marginals=mg, dependence=dep).fit(Z, Z @ a)
    return m, sample_correlated(mg, dep, M_L, seed + 1), dep


def test_linear_correlate_matches_closed_form():
    a = np.array([1.0, 2.0, 0.5])
    m, ZL, dep = _linear_fit("correlate", a, 0.5)
    rep = ancova_indices(m, ZL)
    exact = _linear_indices(a, dep.copula_correlation)
    for k in ("S", "S_U", "S_C"):
        np.testing.assert_allclose(getattr(rep, k), exact[k], atol=0.01)
    assert rep.sum_check == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(rep.S, rep.S_U + rep.S_C, atol=1e-15)


def test_independent_inputs_have_no_correlative_part():
    m, ZL, _ = _linear_fit("correlate", np.array([1.0, -1.5]), 0.0)
    rep = ancova_indices(m, ZL)
    assert np.abs(rep.S_C).max() < 5 / math.sqrt(ZL.shape[0])


@pytest.mark.parametrize("strategy", ["nataf", "rosenblatt"])
def test_decorrelated_substitution_and_faithful(strategy):
    a = np.array([1.0, 1.0])
    m, ZL, dep = _linear_fit(strategy, a, 0.5)
    R = dep.copula_correlation
    c = np.linalg.cholesky(R).T @ a
    sub = ancova_indices(m, ZL)
    np.testing.assert_allclose(sub.S, _linear_indices(c, R)["S"], atol=0.01)
    faithful = ancova_indices(m, ZL, faithful=True)
    np.testing.assert_allclose(faithful.S, _linear_indices(a, R)["S"], atol=0.01)


def test_degenerate_variance_raises():
    mg = [MarginalModel.normal()] * 2
    Z = sample_correlated(mg, None, 40, 3)
    m = PCERegressor(marginals=mg, dependence=DependenceModel.independent(2)).fit(Z, np.ones(40))
    with pytest.raises(NumericalError):
        ancova_indices(m, sample_correlated(mg, None, 2000, 4))


def test_small_evaluation_sample_warns(caplog):
    m, _, _ = _linear_fit("correlate", np.array([1.0, 2.0]), 0.3)
    with caplog.at_level(logging.WARNING):
        ancova_indices(m, sample_correlated([MarginalModel.normal()] * 2, None, 500, 5))
    assert "500" in caplog.text


def test_parallel_matches_serial():
    m, ZL, _ = _linear_fit("correlate", np.array([1.0, 2.0, 0.5]), 0.5, M_L=30_000)
    a = ancova_indices(m, ZL, n_jobs=1)
    b = ancova_indices(m, ZL, n_jobs=4)
    assert a.to_json() == b.to_json()


def test_report_from_terms_interaction_share():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(50_000, 2))
    terms = {(0,): x[:, 0], (1,): x[:, 1], (0, 1): x[:, 0] * x[:, 1]}
    rep = report_from_terms(sum(terms.values()), terms, 2)
    assert rep.sum_check == pytest.approx(1.0, abs=1e-12)
    assert rep.interaction_share == pytest.approx(1 / 3, abs=0.02)


# -- Sobol -------------------------------------------------------------------
def test_sobol_additive():
    s = sobol_indices(SimpleNamespace(strategy="nataf", multi_indices_=np.array([[0, 0], [1, 0], [0, 1]]),
                                      coef_=np.array([3.0, 2.0, 1.0])))
    np.testing.assert_allclose(s["first"], [0.8, 0.2])
    np.testing.assert_allclose(s["total"], [0.8, 0.2])
    assert s["variance"] == 5.0


def test_sobol_single_term():
    s = sobol_indices(SimpleNamespace(strategy="nataf", multi_indices_=np.array([[0, 0], [2, 0]]),
                                      coef_=np.array([1.0, 0.7])))
    np.testing.assert_allclose(s["first"], [1.0, 0.0])


def test_sobol_ishigami():
    model = make_benchmark("ishigami_copula", rho=0.0)
    Z = model.sample(1000, 7)
    m = PCERegressor("correlate", p_max=8, marginals=model.marginals, dependence=model.dependence).fit(
        Z, model.evaluate(Z))
    s = sobol_indices(m)
    np.testing.assert_allclose(s["first"], [0.3139, 0.4424, 0.0], atol=0.02)
    np.testing.assert_allclose(s["total"], [0.5576, 0.4424, 0.2437], atol=0.02)


def test_sobol_warns_for_correlated_correlate_model():
    m, ZL, _ = _linear_fit("correlate", np.array([1.0, 1.0]), 0.5, M_L=2000)
    with pytest.warns(RuntimeWarning, match="correlated"):
        sobol_indices(m)


# -- report --------------------------------------------------------------------
def _report(S, S_U):
    S, S_U = np.array(S, dtype=float), np.array(S_U, dtype=float)
    return AncovaReport("correlate", 10, 0.0, 1.0, S, S_U, S - S_U, 1.0, 0.0,
                        [f"Z{j + 1}" for j in range(S.size)])


def test_ranking_tie_break():
    assert _report([0.3, 0.4, 0.3], [0.1, 0.2, 0.25]).ranking == [1, 2, 0]
    assert _report([0.5, 0.5], [0.2, 0.2]).ranking == [0, 1]


def test_report_serialization():
    rep = _report([0.7, 0.3], [0.5, 0.1])
    doc = json.loads(rep.to_json())
    assert doc["ranking"] == ["Z1", "Z2"]
    assert doc["indices"][1] == {"input": "Z2", "S": 0.3, "S_U": 0.1, "S_C": 0.19999999999999998}
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["input", "S", "S_U", "S_C"]
    assert float(rows[1][3]) == rep.S_C[0]


def test_ranking_stable_across_designs():
    a = np.array([1.0, 2.0, 0.5])
    top = []
    for seed in range(40):
        m, ZL, _ = _linear_fit("correlate", a, 0.5, M_L=10_000, seed=100 + 2 * seed)
        top.append(ancova_indices(m, ZL).ranking)
    assert sum(r == [1, 0, 2] for r in top) >= 0.99 * len(top)


def test_render_index_table():
    text = render_index_table({"A": [0.12344, 0.5], "B": [1.0, 0.0]}, ["x", "y"])
    lines = text.splitlines()
    assert lines[0].split(" | ")[0].strip() == "Input"
    assert lines[2].split("|")[-1].strip() == "0.6234"
    with pytest.raises(InputError):
        render_index_table({})


# -- smoothing -----------------------------------------------------------------
def _sum_model():
    return make_benchmark("linear_gaussian", rho=0.0, dim=2)


def test_smoothing_independent_sum():
    bm = _sum_model()
    out = smooth_and_requantify(bm, bm.sample(200_000, 8), [0])
    assert out["delta_sigma_pct"] == pytest.approx(100 * (1 / math.sqrt(2) - 1), abs=0.3)


def test_smoothing_rejects_bad_sets():
    bm = _sum_model()
    Z = bm.sample(100, 9)
    with pytest.raises(InputError):
        smooth_and_requantify(bm, Z, [])
    with pytest.raises(InputError):
        smooth_and_requantify(bm, Z, [2])


def test_smoothing_everything():
    bm = _sum_model()
    out = smooth_and_requantify(bm, bm.sample(1000, 10), [0, 1])
    assert out["all_smoothed"]
    assert out["sigma_after"] == 0.0
    assert out["delta_sigma_pct"] == pytest.approx(-100.0, abs=1e-12)


def test_smoothing_irrelevant_input():
    bm = make_benchmark("linear_gaussian", rho=0.0, a=[1.0, 0.0])
    M = 50_000
    out = smooth_and_requantify(bm, bm.sample(M, 11), [1])
    assert abs(out["delta_sigma_pct"]) / 100 < 3 / math.sqrt(M)


def test_smoothing_with_reference():
    bm = make_benchmark("linear_gaussian", rho=0.5, a=[1.0, 2.0, 0.5])
    Zp = bm.sample(60, 12)
    m = PCERegressor(marginals=bm.marginals, dependence=bm.dependence).fit(Zp, bm.evaluate(Zp))
    out = smooth_and_requantify(m, bm.sample(100_000, 13), [1], reference=bm)
    expected = 100 * (math.sqrt(1.75 / 8.75) - 1)
    assert out["delta_sigma_pct_ref"] == pytest.approx(expected, abs=0.5)
    assert abs(out["delta_sigma_rr"]) < 1e-6
    assert abs(out["delta_sigma_re"]) < 1e-6
