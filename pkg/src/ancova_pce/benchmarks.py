"""Benchmark models with known HDMR, Monte Carlo ANCOVA oracle and strategy comparison."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ancova import ML_DEFAULT, ancova_indices, render_index_table, report_from_terms
from .exceptions import InputError, NumericalError
from .marginals import DependenceModel, MarginalModel, sample_correlated
from .regression import STRATEGIES, PCERegressor

LOGGER = logging.getLogger(__name__)

BENCHMARKS = ("linear_gaussian", "quadratic_copula", "ishigami_copula", "dc_ttc_toy", "dispatch_toy")
BINS_DEFAULT = 50
MP_DEFAULT = 60


def derive_seed(seed, stream):
    """Independent integer seed for a named stream (design, evaluation, reference...)."""
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# DC transfer-capability toy
# ---------------------------------------------------------------------------
class DcNetwork:
    """Lossless DC network with power transfer distribution factors.

    Parameters
    ----------
    n_bus : int
    lines : sequence of (from_bus, to_bus, reactance, limit)
    slack : int
        Reference bus; its PTDF column is zero.
    """

    def __init__(self, n_bus, lines, slack=0):
        self.n_bus = int(n_bus)
        lines = [tuple(l) for l in lines]
        if self.n_bus < 2 or not lines:
            raise InputError("network needs at least 2 buses and 1 line")
        if not 0 <= slack < self.n_bus:
            raise InputError("slack bus out of range")
        A = np.zeros((len(lines), self.n_bus))
        x = np.empty(len(lines))
        limits = np.empty(len(lines))
        for i, (f, t, xi, lim) in enumerate(lines):
            if not (0 <= f < self.n_bus and 0 <= t < self.n_bus) or f == t:
                raise InputError(f"line {i} has invalid endpoints ({f}, {t})")
            if not xi > 0 or not lim > 0:
                raise InputError(f"line {i} needs positive reactance and limit")
            A[i, f], A[i, t] = 1.0, -1.0
            x[i], limits[i] = xi, lim
        keep = [b for b in range(self.n_bus) if b != slack]
        Bbus = A.T @ (A / x[:, None])
        Bred = Bbus[np.ix_(keep, keep)]
        if np.linalg.matrix_rank(Bred) < len(keep):
            raise InputError("network is not connected")
        ptdf = np.zeros((len(lines), self.n_bus))
        ptdf[:, keep] = (A[:, keep] / x[:, None]) @ np.linalg.inv(Bred)
        self.lines = lines
        self.slack = slack
        self.limits = limits
        self.ptdf = ptdf


def transfer_capability(network, injections, injection_buses, source, sink):
    """Largest source-to-sink transfer before any line limit binds, per row of ``injections``.

    ``injections`` has one column per bus in ``injection_buses``; the slack
    bus balances them. The transfer moves power from ``source`` to ``sink``.
    """
    inj = np.atleast_2d(np.asarray(injections, dtype=float))
    shift = network.ptdf[:, source] - network.ptdf[:, sink]
    active = np.abs(shift) > 1e-12
    if not active.any():
        raise InputError("the transfer does not load any line")
    flows = inj @ network.ptdf[:, injection_buses].T
    s = shift[active]
    lim = network.limits[active]
    f = flows[:, active]
    headroom = np.where(s > 0, (lim - f) / s, (-lim - f) / s)
    return headroom.min(axis=1)


DC_TTC_DEFAULT = {
    "n_bus": 5,
    "lines": [(0, 1, 0.10, 1.0), (0, 2, 0.20, 1.2), (1, 2, 0.25, 0.8),
              (1, 3, 0.10, 1.0), (2, 4, 0.15, 1.0), (3, 4, 0.20, 0.9)],
    "slack": 4,
    "source": 0,
    "sink": 4,
    "injection_buses": [1, 2, 3],
    "injection_std": [0.15, 0.12, 0.10],
}


# ---------------------------------------------------------------------------
# Economic dispatch toy
# ---------------------------------------------------------------------------
DISPATCH_DEFAULT = {
    "p_max": [100.0, 80.0, 80.0, 60.0, 60.0, 50.0, 50.0, 40.0, 30.0, 30.0],
    "no_load": [120.0, 90.0, 95.0, 70.0, 75.0, 60.0, 65.0, 50.0, 45.0, 40.0],
    "linear": [10.0, 12.0, 12.5, 15.0, 16.0, 18.0, 19.0, 22.0, 25.0, 28.0],
    "quadratic": [0.010, 0.012, 0.012, 0.020, 0.020, 0.030, 0.030, 0.040, 0.050, 0.050],
    "demand": 500.0,
    "wind_total": 300.0,
    "shed_price": 1000.0,
}


def dispatch_cost(net_load, p_max, no_load, linear, quadratic, shed_price, iters=100):
    """Merit-order commitment plus equal-incremental-cost dispatch, vectorized over loads.

    Units are committed in the given order until their capacity covers the
    load; committed units are dispatched at a common marginal cost. Load
    above total capacity is shed at ``shed_price``.
    """
    L = np.asarray(net_load, dtype=float)
    pm, a0, b, g = (np.asarray(v, dtype=float) for v in (p_max, no_load, linear, quadratic))
    cap = np.cumsum(pm)
    served = np.clip(L, 0.0, cap[-1])
    n_on = np.minimum(np.searchsorted(cap, served, side="left") + 1, pm.size)
    n_on = np.where(served > 0, n_on, 0)
    on = np.arange(pm.size)[None, :] < n_on[:, None]
    lo = np.full(L.shape, b.min())
    hi = np.full(L.shape, float(np.max(b + 2.0 * g * pm)))
    for _ in range(iters):
        lam = 0.5 * (lo + hi)
        P = np.where(on, np.clip((lam[:, None] - b) / (2.0 * g), 0.0, pm), 0.0)
        short = P.sum(axis=1) < served
        lo = np.where(short, lam, lo)
        hi = np.where(short, hi, lam)
    lam = 0.5 * (lo + hi)
    P = np.where(on, np.clip((lam[:, None] - b) / (2.0 * g), 0.0, pm), 0.0)
    cost = (on * a0).sum(axis=1) + (P * b).sum(axis=1) + (P * P * g).sum(axis=1)
    return cost + shed_price * (L - served).clip(min=0.0)


# ---------------------------------------------------------------------------
# Test models
# ---------------------------------------------------------------------------
@dataclass
class TestModel:
    """A benchmark response with its input distribution.

    ``hdmr`` is available for kinds whose decomposition into zero-mean
    (under each marginal) terms is known in closed form.
    """

    __test__ = False  # not a pytest class

    kind: str
    params: dict
    marginals: list
    dependence: DependenceModel
    input_names: list = field(default=None)

    def __post_init__(self):
        if self.input_names is None:
            self.input_names = [f"Z{j + 1}" for j in range(len(self.marginals))]
        self._centers = np.array([m.mean for m in self.marginals])
        self._scales = np.array([m.std for m in self.marginals])
        if self.kind == "dc_ttc_toy":
            p = self.params
            self._network = DcNetwork(p["n_bus"], p["lines"], p["slack"])
            base = transfer_capability(self._network, np.zeros((1, len(p["injection_buses"]))),
                                       p["injection_buses"], p["source"], p["sink"])[0]
            if not base > 0:
                raise InputError("toy network has no transfer capability at zero injection")

    @property
    def dim(self):
        return len(self.marginals)

    @property
    def has_hdmr(self):
        return self.kind in ("linear_gaussian", "quadratic_copula", "ishigami_copula")

    def _check(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != self.dim:
            raise InputError(f"{self.kind} expects {self.dim} inputs")
        return Z

    def sample(self, M, seed, design="lhs", n_jobs=1):
        return sample_correlated(self.marginals, self.dependence, M, seed, design, n_jobs)

    def evaluate(self, Z):
        Z = self._check(Z)
        p = self.params
        if self.kind == "dc_ttc_toy":
            return transfer_capability(self._network, Z, p["injection_buses"], p["source"], p["sink"])
        if self.kind == "dispatch_toy":
            return dispatch_cost(p["demand"] - Z.sum(axis=1), p["p_max"], p["no_load"], p["linear"],
                                 p["quadratic"], p["shed_price"])
        g0, terms = self._hdmr(Z)
        return g0 + sum(terms.values())

    __call__ = evaluate

    def hdmr(self, Z):
        """``(G_0, {subset: G_subset(Z)})`` for benchmarks with a closed-form HDMR."""
        if not self.has_hdmr:
            raise InputError(f"{self.kind} has no closed-form HDMR")
        return self._hdmr(self._check(Z))

    def _hdmr(self, Z):
        p = self.params
        if self.kind == "linear_gaussian":
            a = np.asarray(p["a"])
            return float(a @ self._centers), {(j,): a[j] * (Z[:, j] - self._centers[j])
                                              for j in range(self.dim)}
        if self.kind == "quadratic_copula":
            x = (Z - self._centers) / self._scales
            a, b = np.asarray(p["a"]), np.asarray(p["b"])
            terms = {(j,): a[j] * x[:, j] + b[j] * (x[:, j] ** 2 - 1.0) for j in range(self.dim)}
            terms[(0, 1)] = p["c"] * x[:, 0] * x[:, 1]
            return 0.0, terms
        if self.kind == "ishigami_copula":
            a, b = p["a"], p["b"]
            m4 = math.pi**4 / 5.0
            s1 = np.sin(Z[:, 0])
            terms = {(0,): (1.0 + b * m4) * s1,
                     (1,): a * (np.sin(Z[:, 1]) ** 2 - 0.5),
                     (2,): np.zeros(Z.shape[0]),
                     (0, 2): b * (Z[:, 2] ** 4 - m4) * s1}
            return a / 2.0, terms
        raise InputError(f"{self.kind} has no closed-form HDMR")

    def known_indices(self):
        """Closed-form ANCOVA indices (linear-Gaussian only), else ``None``."""
        if self.kind != "linear_gaussian":
            return None
        s = self._scales
        R = self.dependence.copula_correlation
        b = np.asarray(self.params["a"]) * s
        return _linear_indices(b, R)


def _linear_indices(c, R):
    v = float(c @ R @ c)
    if v <= 0:
        raise NumericalError("linear model has zero variance")
    S = c * (R @ c) / v
    S_U = c * c / v
    return {"S": S, "S_U": S_U, "S_C": S - S_U}


def make_benchmark(name, rho=0.5, dim=None, **params):
    """Benchmark by name with an equicorrelated Pearson correlation ``rho``.

    ``dim`` only applies to ``linear_gaussian`` (unit coefficients) and
    ``dispatch_toy`` (number of wind inputs; 12 by default, 120 for the
    stress configuration).
    """
    if name not in BENCHMARKS:
        raise InputError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    rho = float(rho)
    if not -1.0 < rho < 1.0:
        raise InputError(f"rho must lie in (-1, 1), got {rho}")
    if name == "linear_gaussian":
        a = np.asarray(params.pop("a", np.ones(dim or 2)), dtype=float)
        std = np.asarray(params.pop("std", np.ones(a.size)), dtype=float)
        marginals = [MarginalModel.normal(0.0, float(s)) for s in std]
        par = {"a": a.tolist()}
    elif name == "quadratic_copula":
        marginals = [MarginalModel.uniform(0.0, 1.0), MarginalModel.normal(0.0, 1.0),
                     MarginalModel.lognormal(0.0, 0.3), MarginalModel.beta(2.0, 3.0)]
        par = {"a": [1.0, 0.8, 0.6, 0.4], "b": [0.3, 0.0, 0.5, 0.2], "c": 0.5}
    elif name == "ishigami_copula":
        marginals = [MarginalModel.uniform(-math.pi, math.pi)] * 3
        par = {"a": 7.0, "b": 0.1}
    elif name == "dc_ttc_toy":
        par = {k: (list(v) if isinstance(v, list) else v) for k, v in DC_TTC_DEFAULT.items()}
        marginals = [MarginalModel.normal(0.0, s) for s in par["injection_std"]]
    else:
        D = int(dim or 12)
        par = dict(DISPATCH_DEFAULT)
        cap = par["wind_total"] / D
        marginals = [MarginalModel.beta(2.0, 3.0, 0.0, cap)] * D
    par.update(params)
    D = len(marginals)
    dep = DependenceModel.equicorrelated(D, rho, marginals) if rho != 0.0 else DependenceModel.independent(D)
    return TestModel(name, par, marginals, dep)


# ---------------------------------------------------------------------------
# Monte Carlo ANCOVA oracle
# ---------------------------------------------------------------------------
def binned_main_effect(z, y, bins):
    """Piecewise-constant ``E[y | z] - mean(y)`` on equal-probability bins of ``z``.

    Bins left empty by ties are merged into their neighbor.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    bins = int(bins)
    if bins < 1:
        raise InputError("bins must be >= 1")
    edges = np.quantile(z, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    label = np.searchsorted(edges, z, side="right")
    counts = np.bincount(label, minlength=bins)
    if np.any(counts == 0):
        LOGGER.info("merging %d empty bins into neighbors", int(np.sum(counts == 0)))
        # relabel to consecutive nonempty bins; an empty bin's range joins the next one
        nonempty = np.nonzero(counts)[0]
        label = np.searchsorted(nonempty, label)
        counts = np.bincount(label)
    sums = np.bincount(label, weights=y, minlength=counts.size)
    return sums[label] / counts[label] - y.mean()


def mc_ancova(model, M=100_000, seed=0, bins=BINS_DEFAULT, Z=None, design="lhs", n_jobs=1):
    """Reference ANCOVA indices of a benchmark by Monte Carlo.

    Uses the closed-form HDMR when the benchmark has one; otherwise main
    effects are estimated as binned conditional means, which leaves
    interactions unresolved (``sum_check`` then reports the explained share).
    """
    if Z is None:
        M = int(M)
        if M < 2:
            raise InputError("Monte Carlo sample size must be >= 2")
        if M < 10_000:
            LOGGER.warning("Monte Carlo ANCOVA with only %d samples", M)
        Z = model.sample(M, seed, design, n_jobs)
    y = model.evaluate(Z)
    if model.has_hdmr:
        _, terms = model.hdmr(Z)
    else:
        terms = {(j,): binned_main_effect(Z[:, j], y, bins) for j in range(model.dim)}
    return report_from_terms(y, terms, model.dim, "mc", model.input_names)


def transform_substitution_error(a, Sigma):
    """Closed-form ANCOVA indices of the substituted linear-Gaussian surrogate.

    With ``Y = a^T Z``, ``Z ~ N(mu, Sigma)``, the surrogate on decorrelated
    variables has coefficients ``c = L^T (s * a)`` (``L`` the Cholesky
    factor of the correlation, ``s`` the standard deviations). Evaluating it
    on the standardized physical inputs gives ``c^T X`` with ``X ~ N(0, R)``
    instead of ``(s * a)^T X``.

    Returns
    -------
    dict
        ``true``, ``substituted`` and ``delta`` (substituted minus true), each
        with arrays ``S``, ``S_U``, ``S_C``; plus the coefficients ``c``.
    """
    a = np.asarray(a, dtype=float).ravel()
    Sigma = np.array(Sigma, dtype=float, ndmin=2)
    if Sigma.shape != (a.size, a.size):
        raise InputError("Sigma shape does not match a")
    if not np.allclose(Sigma, Sigma.T):
        raise NumericalError("Sigma is not symmetric")
    try:
        s = np.sqrt(np.diag(Sigma))
        R = Sigma / np.outer(s, s)
        L = np.linalg.cholesky(R)
    except (np.linalg.LinAlgError, FloatingPointError):
        raise NumericalError("Sigma is not positive definite") from None
    if np.min(np.linalg.eigvalsh(R)) <= 1e-10:
        raise NumericalError("Sigma is not positive definite")
    b = s * a
    c = L.T @ b
    true = _linear_indices(b, R)
    sub = _linear_indices(c, R)
    return {"true": true, "substituted": sub, "coefficients": c,
            "delta": {k: sub[k] - true[k] for k in true}}


# ---------------------------------------------------------------------------
# Strategy comparison
# ---------------------------------------------------------------------------
@dataclass
class ComparisonTable:
    input_names: list
    rows: list
    reference: object

    def index_rows(self):
        out = {r["label"]: r["S"] for r in self.rows}
        out["MC"] = list(self.reference.S)
        return out

    def render(self, decimals=4):
        text = render_index_table(self.index_rows(), self.input_names, decimals)
        lines = [f"{r['label']}: max |dS| = {r['max_abs_error']:.4f}, KS = {r['ks']:.4f}, "
                 f"p = {r['p_selected']}, e_cloo = {r['e_cloo']:.3e}" for r in self.rows]
        return text + "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy"] + list(self.input_names) + ["max_abs_error", "ks", "p_selected", "e_cloo"])
        for r in self.rows:
            w.writerow([r["strategy"]] + ["%.17g" % v for v in r["S"]]
                       + ["%.17g" % r["max_abs_error"], "%.17g" % r["ks"], r["p_selected"],
                          "%.17g" % r["e_cloo"]])
        w.writerow(["mc"] + ["%.17g" % v for v in self.reference.S] + ["", "", "", ""])
        return buf.getvalue()


LABELS = {"correlate": "PCE_correlate", "nataf": "PCE_NT", "rosenblatt": "PCE_RT"}


def compare_strategies(model, strategies=STRATEGIES, M_p=MP_DEFAULT, M_L=ML_DEFAULT, M_ref=100_000,
                       seed=0, p_max=5, bins=BINS_DEFAULT, faithful=False, design="lhs", n_jobs=1):
    """Fit each strategy on one design, analyze on one evaluation sample, compare to MC.

    Design, evaluation and reference samples come from independent seed
    streams derived from ``seed``.
    """
    Zp = model.sample(M_p, derive_seed(seed, 0), design, n_jobs)
    yp = model.evaluate(Zp)
    ZL = model.sample(M_L, derive_seed(seed, 1), design, n_jobs)
    Zr = model.sample(M_ref, derive_seed(seed, 2), design, n_jobs)
    ref = mc_ancova(model, Z=Zr, bins=bins)
    y_ref = model.evaluate(Zr)
    rows = []
    for s in strategies:
        if s not in STRATEGIES:
            raise InputError(f"unknown strategy {s!r}")
        est = PCERegressor(s, p_max=p_max, marginals=model.marginals, dependence=model.dependence,
                           faithful=faithful, n_jobs=n_jobs).fit(Zp, yp)
        rep = ancova_indices(est, ZL, faithful=faithful, input_names=model.input_names, n_jobs=n_jobs)
        yhat = est.predict(ZL)
        rows.append({
            "strategy": s,
            "label": LABELS[s],
            "S": [float(v) for v in rep.S],
            "S_U": [float(v) for v in rep.S_U],
            "max_abs_error": float(np.max(np.abs(rep.S - ref.S))),
            "ks": float(stats.ks_2samp(yhat, y_ref).statistic),
            "p_selected": int(est.fit_info_["p_selected"]),
            "e_cloo": float(est.fit_info_["e_cloo"]),
            "report": rep,
            "model": est,
        })
    return ComparisonTable(list(model.input_names), rows, ref)
