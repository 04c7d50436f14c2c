"""Sparse PCE regression: least angle regression with corrected leave-one-out selection."""

from __future__ import annotations

import json
import logging
import math

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .basis import BasisSet, UnivariateBasis
from .exceptions import InputError, NumericalError
from .marginals import P_MAX_DEFAULT, DependenceModel, MarginalModel, fit_marginal
from .transforms import IsoTransformer

LOGGER = logging.getLogger(__name__)

STRATEGIES = ("correlate", "nataf", "rosenblatt")
ACCURACY_DEFAULT = 1e-6
IMPROVEMENT_DEFAULT = 0.01
_DEPENDENT_TOL = 1e-10
_TIE_RTOL = 1e-12
# exact fits all score ~1e-30; among those the earliest (sparsest) step wins
_SELECTION_SLACK = 1e-20


def _ols_loo(Psi, y):
    """Hat diagonal, OLS residual and tr((Psi^T Psi)^-1) by a thin QR."""
    Q, R = np.linalg.qr(Psi)
    if np.min(np.abs(np.diag(R))) <= _DEPENDENT_TOL * max(np.max(np.abs(np.diag(R))), 1.0):
        raise NumericalError("design restricted to the active set is rank deficient")
    h = np.einsum("ij,ij->i", Q, Q)
    resid = y - Q @ (Q.T @ y)
    Rinv = solve_triangular(R, np.eye(R.shape[0]))
    return h, resid, float(np.sum(Rinv**2))


def _cloo_from_parts(h, resid, trace, n_terms, y):
    M = y.size
    var_y = float(np.var(y, ddof=1)) if M > 1 else 0.0
    if n_terms >= M:
        return math.inf
    if np.any(h >= 1.0 - 1e-12):
        return math.inf
    if var_y == 0.0:
        return 0.0
    loo = float(np.mean((resid / (1.0 - h)) ** 2)) / var_y
    return loo * (M / (M - n_terms)) * (1.0 + trace)


def corrected_loo_error(design, y, active_set):
    """Corrected leave-one-out error of the OLS fit on ``{constant} + active_set``.

    The LOO residuals come from the hat-matrix identity ``e_i / (1 - h_i)``;
    the mean squared LOO residual is normalized by the sample variance of
    ``y`` and multiplied by ``M / (M - P) * (1 + tr((Psi^T Psi)^-1))`` where
    ``P`` counts the constant term.
    """
    Psi = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if Psi.ndim != 2 or Psi.shape[0] != y.size:
        raise InputError("design and y have inconsistent shapes")
    active = [int(a) for a in active_set]
    cols = [np.ones(y.size)] + [Psi[:, a] for a in active if np.ptp(Psi[:, a]) > 0]
    P = len(cols)
    if len(active) >= y.size or P >= y.size:
        raise InputError(f"active set of size {len(active)} saturates {y.size} samples")
    h, resid, trace = _ols_loo(np.column_stack(cols), y)
    if np.any(h >= 1.0 - 1e-12):
        raise NumericalError("hat-matrix diagonal equals 1: exact interpolation",
                             {"active_set": active})
    return _cloo_from_parts(h, resid, trace, P, y)


class _LarsPath:
    """Least angle regression path with incremental QR of the active columns.

    Columns with zero variance are treated as intercepts and kept out of the
    path. Along the way, the hybrid (OLS on the active set) corrected LOO
    error is recorded after each entry, reusing the same factorization.
    """

    def __init__(self, design, y, max_steps=None):
        Psi = np.asarray(design, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        M, L = Psi.shape
        if M < 2:
            raise InputError("LAR needs at least 2 samples")
        means = Psi.mean(axis=0)
        Xc = Psi - means
        norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
        self.candidates = np.nonzero(norms > 1e-12 * np.maximum(1.0, np.abs(means)) * math.sqrt(M))[0]
        self.X = Xc[:, self.candidates] / norms[self.candidates]
        self.col_means = means[self.candidates]
        self.col_norms = norms[self.candidates]
        self.y = y
        self.yc = y - y.mean()
        self.M = M
        limit = min(self.candidates.size, M - 1)
        self.max_steps = limit if max_steps is None else min(limit, int(max_steps))
        self.active = []
        self.e_cloo = []
        self.dropped = []
        self._run()

    def _run(self):
        M, X, yc = self.M, self.X, self.yc
        K = self.max_steps
        Q = np.zeros((M, K))
        R = np.zeros((K, K))
        T = np.zeros((K, K))  # (R diag(norms))^-1, upper triangular
        h = np.full(M, 1.0 / M)
        resid = yc.copy()
        trace = 1.0 / M
        self.e_cloo.append(_cloo_from_parts(h, resid, trace, 1, self.y))

        y_scale = float(np.linalg.norm(yc))
        if K == 0 or y_scale <= 1e-14 * max(1.0, abs(float(self.y.mean()))) * math.sqrt(M):
            return
        c = X.T @ yc
        C0 = float(np.max(np.abs(c)))
        mask = np.ones(X.shape[1], dtype=bool)
        signs = []

        def pick(scores):
            best = np.max(scores)
            ties = np.nonzero(scores >= best * (1.0 - _TIE_RTOL))[0]
            if ties.size > 1:
                LOGGER.debug("LAR tie between columns %s; taking the first", ties.tolist())
            return int(ties[0])

        j = pick(np.where(mask, np.abs(c), -np.inf))
        C = float(abs(c[j]))
        k = 0
        while True:
            # entering column j: orthogonalize against current Q (two passes)
            v = X[:, j].copy()
            coef = Q[:, :k].T @ v
            v -= Q[:, :k] @ coef
            corr = Q[:, :k].T @ v
            v -= Q[:, :k] @ corr
            coef += corr
            rho = float(np.linalg.norm(v))
            mask[j] = False
            if rho <= _DEPENDENT_TOL:
                self.dropped.append(int(self.candidates[j]))
                LOGGER.debug("column %d is linearly dependent on the active set; skipped",
                             self.candidates[j])
            else:
                q = v / rho
                Q[:, k] = q
                R[:k, k] = coef
                R[k, k] = rho
                n_new = self.col_norms[j]
                t = np.zeros(k + 1)
                t[:k] = -(T[:k, :k] @ coef) / rho
                t[k] = 1.0 / (rho * n_new)
                T[: k + 1, k] = t
                self.active.append(j)
                signs.append(np.sign(c[j]) if c[j] != 0 else 1.0)
                k += 1
                mu = self.col_means[self.active]
                trace += float(t @ t) + float(mu @ t) ** 2
                h = h + q * q
                resid = resid - q * float(q @ yc)
                self.e_cloo.append(_cloo_from_parts(h, resid, trace, k + 1, self.y))

            if k >= self.max_steps or not mask.any():
                return
            if k == 0:
                j = pick(np.where(mask, np.abs(c), -np.inf))
                C = float(abs(c[j]))
                continue
            s = np.asarray(signs)
            Rk = R[:k, :k]
            z = solve_triangular(Rk, s, trans="T", lower=False)
            d = solve_triangular(Rk, z, lower=False)
            A = 1.0 / math.sqrt(float(s @ d))
            w = A * d
            u = X[:, self.active] @ w
            a = X.T @ u
            with np.errstate(divide="ignore", invalid="ignore"):
                g1 = (C - c) / (A - a)
                g2 = (C + c) / (A + a)
            g1 = np.where(mask & (g1 > 1e-14 * C), g1, np.inf)
            g2 = np.where(mask & (g2 > 1e-14 * C), g2, np.inf)
            g = np.minimum(g1, g2)
            gamma = float(np.min(g))
            if not np.isfinite(gamma) or gamma >= C / A:
                return
            c = c - gamma * a
            C = C - gamma * A
            if C <= 1e-12 * C0:
                return
            ties = np.nonzero(g <= gamma * (1.0 + _TIE_RTOL))[0]
            j = int(ties[0])

    @property
    def active_sets(self):
        """Active sets (original column indices) after each entry."""
        cols = self.candidates[self.active]
        return [tuple(int(x) for x in cols[: i + 1]) for i in range(len(cols))]


def lar_path(design, y, max_steps=None):
    """Ordered list of LAR active sets (column indices into ``design``).

    Constant columns are excluded (the intercept is implicit); the path
    stops when the residual correlation vanishes or ``min(M - 1, L)``
    columns are active.
    """
    return _LarsPath(design, y, max_steps).active_sets


def _select_step(e_cloo):
    e = np.asarray(e_cloo, dtype=float)
    if not np.isfinite(e).any():
        return None
    best = float(np.min(e))
    return int(np.nonzero(e <= best + _SELECTION_SLACK)[0][0])


class PCERegressor(RegressorMixin, BaseEstimator):
    """Sparse polynomial chaos expansion fitted by hybrid LAR.

    Parameters
    ----------
    strategy : {'correlate', 'nataf', 'rosenblatt'}
        Input space of the expansion. ``correlate`` builds the tensor basis
        directly on the correlated inputs; the others decorrelate first.
    p_max : int
        Highest total degree tried.
    marginals : list of MarginalModel, optional
        Estimated from the training inputs (kind ``marginal_kind``) if omitted.
    dependence : DependenceModel, optional
        Estimated by normal scores from the training inputs if omitted.
    faithful : bool
        Default for :meth:`predict`. When False (the default), models built on
        decorrelated inputs are evaluated on the marginally standardized
        physical inputs without the decorrelation step; when True the full
        transform is applied first.
    basis_source : {'marginal', 'data'}
        Where the univariate moments come from: the marginal model (standard
        normal for decorrelated strategies) or the training sample.
    accuracy, improvement : float
        Order loop stops once the corrected LOO error drops below
        ``accuracy``, or fails to improve by the relative ``improvement``
        for two consecutive orders.
    ordering : sequence of int, optional
        Rosenblatt conditioning order.
    """

    def __init__(self, strategy="correlate", p_max=P_MAX_DEFAULT, marginals=None, dependence=None,
                 faithful=False, basis_source="marginal", accuracy=ACCURACY_DEFAULT,
                 improvement=IMPROVEMENT_DEFAULT, ordering=None, marginal_kind="empirical", n_jobs=1):
        self.strategy = strategy
        self.p_max = p_max
        self.marginals = marginals
        self.dependence = dependence
        self.faithful = faithful
        self.basis_source = basis_source
        self.accuracy = accuracy
        self.improvement = improvement
        self.ordering = ordering
        self.marginal_kind = marginal_kind
        self.n_jobs = n_jobs

    # -- fitting --------------------------------------------------------------
    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        M, D = X.shape
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if M < D + 2:
            raise InputError(f"need at least D + 2 = {D + 2} samples, got {M}")
        if int(self.p_max) < 1:
            raise InputError("p_max must be >= 1")
        if self.basis_source not in ("marginal", "data"):
            raise InputError("basis_source must be 'marginal' or 'data'")

        marginals = (list(self.marginals) if self.marginals is not None
                     else [fit_marginal(X[:, j], self.marginal_kind) for j in range(D)])
        if len(marginals) != D:
            raise InputError(f"{len(marginals)} marginals for {D} inputs")
        dep = self.dependence
        if dep is None:
            dep = DependenceModel.from_data(X) if self.strategy != "correlate" else DependenceModel.independent(D)
        kind = "identity" if self.strategy == "correlate" else self.strategy
        self.transform_ = IsoTransformer(kind, marginals, dep, self.ordering).fit()
        self.marginals_ = marginals
        self.dependence_ = dep
        self.n_features_in_ = D

        space = self.transform_.transform(X)
        p_max = int(self.p_max)
        if self.basis_source == "data":
            univariates = [UnivariateBasis.from_samples(space[:, j], p_max) for j in range(D)]
        elif self.strategy == "correlate":
            univariates = [UnivariateBasis.from_marginal(m, p_max) for m in marginals]
        else:
            hermite = UnivariateBasis.from_marginal(MarginalModel.normal(), p_max)
            univariates = [hermite] * D

        by_order = {}
        best = None
        stall = 0
        prev_size = 0
        for p in range(1, p_max + 1):
            basis = BasisSet.total_degree(univariates, p)
            if basis.size == prev_size:
                break  # every univariate basis was capped below p
            prev_size = basis.size
            Psi = basis.evaluate(space, n_jobs=self.n_jobs)
            path = _LarsPath(Psi, y)
            step = _select_step(path.e_cloo)
            if step is None:
                by_order[p] = math.inf
                LOGGER.info("order %d: every active set saturates", p)
                stall += 1
                if stall >= 2:
                    break
                continue
            e = float(path.e_cloo[step])
            cols = [0] + [int(path.candidates[a]) for a in path.active[:step]]
            by_order[p] = e
            LOGGER.info("order %d: L=%d, active=%d, e_cloo=%.3e", p, basis.size, len(cols) - 1, e)
            enough = best is None or e < best["e"] * (1.0 - float(self.improvement))
            stall = 0 if enough else stall + 1
            if best is None or e < best["e"]:
                best = {"p": p, "e": e, "basis": basis, "Psi": Psi, "cols": cols}
            if best["e"] < float(self.accuracy) or stall >= 2:
                break
        if best is None:
            raise NumericalError("every candidate fit saturates the training sample",
                                 {"M_p": M, "e_cloo_by_order": {str(k): str(v) for k, v in by_order.items()}})

        cols = best["cols"]
        coef, *_ = np.linalg.lstsq(best["Psi"][:, cols], y, rcond=None)
        self.basis_ = best["basis"].subset(cols)
        self.coef_ = coef
        self.fit_info_ = {
            "p_selected": best["p"],
            "e_cloo": best["e"],
            "active_set_size": len(cols) - 1,
            "M_p": M,
            "e_cloo_by_order": {int(k): float(v) for k, v in by_order.items()},
        }
        return self

    # -- evaluation -----------------------------------------------------------
    def analysis_coordinates(self, X, faithful=None):
        """Coordinates at which the basis is evaluated for physical inputs ``X``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} inputs, got {X.shape[1]}")
        faithful = self.faithful if faithful is None else faithful
        if self.strategy == "correlate":
            return X
        if faithful:
            return self.transform_.transform(X)
        return self.transform_.probit(X)

    def design_matrix(self, X, faithful=None):
        return self.basis_.evaluate(self.analysis_coordinates(X, faithful), n_jobs=self.n_jobs)

    def predict(self, X, faithful=None):
        return self.design_matrix(X, faithful) @ self.coef_

    @property
    def multi_indices_(self):
        return self.basis_.multi_indices

    @property
    def intercept_(self):
        return float(self.coef_[0])

    # -- serialization ----------------------------------------------------------
    def to_dict(self):
        check_is_fitted(self, "coef_")
        return {
            "strategy": self.strategy,
            "p": int(self.fit_info_["p_selected"]),
            "multi_indices": self.basis_.multi_indices.tolist(),
            "coefficients": [float(v) for v in self.coef_],
            "univariate_bases": [u.to_spec() for u in self.basis_.univariates],
            "marginals": [m.to_spec() for m in self.marginals_],
            "correlation": self.dependence_.to_spec(),
            "ordering": [int(v) for v in self.transform_.ordering_],
            "faithful": bool(self.faithful),
            "fit_info": {**self.fit_info_,
                         "e_cloo_by_order": {str(k): v for k, v in self.fit_info_["e_cloo_by_order"].items()}},
        }

    @classmethod
    def from_dict(cls, doc):
        marginals = [MarginalModel.from_spec(s) for s in doc["marginals"]]
        dep = DependenceModel.from_spec(doc["correlation"])
        model = cls(strategy=doc["strategy"], p_max=int(doc["p"]), marginals=marginals, dependence=dep,
                    faithful=bool(doc.get("faithful", False)), ordering=doc.get("ordering"))
        kind = "identity" if model.strategy == "correlate" else model.strategy
        model.transform_ = IsoTransformer(kind, marginals, dep, doc.get("ordering")).fit()
        model.marginals_ = marginals
        model.dependence_ = dep
        model.n_features_in_ = len(marginals)
        univariates = [UnivariateBasis.from_spec(s) for s in doc["univariate_bases"]]
        model.basis_ = BasisSet(univariates, np.asarray(doc["multi_indices"], dtype=np.int64))
        model.coef_ = np.asarray(doc["coefficients"], dtype=float)
        info = dict(doc["fit_info"])
        info["e_cloo_by_order"] = {int(k): float(v) for k, v in info.get("e_cloo_by_order", {}).items()}
        model.fit_info_ = info
        return model


PceModel = PCERegressor


def fit_pce(inputs, y, strategy="correlate", p_max=P_MAX_DEFAULT, marginals=None, dep=None, **kwargs):
    """Fit a :class:`PCERegressor` and return it."""
    return PCERegressor(strategy=strategy, p_max=p_max, marginals=marginals, dependence=dep,
                        **kwargs).fit(inputs, y)


def save_model(model, path, input_names=None):
    """Write a fitted model as JSON (floats in shortest round-trip form)."""
    doc = model.to_dict()
    doc["input_names"] = (list(input_names) if input_names is not None
                          else [f"Z{j + 1}" for j in range(model.n_features_in_)])
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Read a model written by :func:`save_model`; returns ``(model, input_names)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model {path}: {exc}") from None
    try:
        model = PCERegressor.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path} is not a valid model document: {exc}") from None
    names = doc.get("input_names") or [f"Z{j + 1}" for j in range(model.n_features_in_)]
    return model, names
