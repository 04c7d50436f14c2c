"""Isoprobabilistic transforms between correlated inputs and independent normals."""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import solve_triangular
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InputError, NumericalError
from .marginals import DependenceModel, fit_marginal

LOGGER = logging.getLogger(__name__)

TRANSFORM_KINDS = ("identity", "nataf", "rosenblatt")
QUAD_NODES = 64
_EDGE = 1.0 - 1e-9


def _quadrature(n=QUAD_NODES):
    x, w = hermegauss(n)
    return x, w / math.sqrt(2.0 * math.pi)


def _spec_key(marginal):
    spec = marginal.to_spec()
    if spec["kind"] == "empirical":
        return ("empirical", id(marginal))
    return (spec["kind"],) + tuple(sorted(spec["params"].items()))


class _PairSolver:
    """Pearson correlation induced by a Gaussian copula, via 2-D Gauss-Hermite."""

    def __init__(self, mi, mj, n_nodes=QUAD_NODES):
        self.x, self.w = _quadrature(n_nodes)
        self.mj = mj
        gi = mi.from_normal(self.x)
        self.mean_i = float(self.w @ gi)
        self.std_i = math.sqrt(float(self.w @ (gi - self.mean_i) ** 2))
        self.gi = (gi - self.mean_i) / self.std_i
        gj = mj.from_normal(self.x)
        self.mean_j = float(self.w @ gj)
        self.std_j = math.sqrt(float(self.w @ (gj - self.mean_j) ** 2))

    def pearson(self, rho0):
        s = math.sqrt(max(1.0 - rho0 * rho0, 0.0))
        arg = rho0 * self.x[:, None] + s * self.x[None, :]
        gj = (self.mj.from_normal(arg) - self.mean_j) / self.std_j
        return float(self.w @ (self.gi[:, None] * gj) @ self.w)


def fictive_correlation(marginals, target_pearson, n_nodes=QUAD_NODES, xtol=1e-12):
    """Gaussian-space correlation reproducing a target Pearson matrix (Nataf).

    Each pair is solved independently with a bracketing root finder on the
    quadrature-computed Pearson correlation, which is monotone in the
    Gaussian correlation. Pairs of normal marginals and zero targets are
    returned unchanged (exact identities).
    """
    marginals = list(marginals)
    R = np.array(target_pearson, dtype=float, ndmin=2)
    D = len(marginals)
    if R.shape != (D, D):
        raise InputError(f"target correlation shape {R.shape} does not match {D} marginals")
    out = np.eye(D)
    cache = {}
    for i in range(D):
        for j in range(i + 1, D):
            target = float(R[i, j])
            if not -1.0 < target < 1.0:
                raise InputError(f"target correlation ({i}, {j}) = {target} outside (-1, 1)")
            mi, mj = marginals[i], marginals[j]
            if target == 0.0 or (mi.kind == "normal" and mj.kind == "normal"):
                out[i, j] = out[j, i] = target
                continue
            key = (_spec_key(mi), _spec_key(mj), target)
            if key not in cache:
                solver = _PairSolver(mi, mj, n_nodes)
                lo, hi = solver.pearson(-_EDGE), solver.pearson(_EDGE)
                if not lo < target < hi:
                    raise NumericalError(
                        f"target correlation {target} infeasible for marginals {i} and {j}",
                        {"pair": [i, j], "target": target, "attainable": [lo, hi]})
                cache[key] = brentq(lambda r: solver.pearson(r) - target, -_EDGE, _EDGE, xtol=xtol)
            out[i, j] = out[j, i] = cache[key]
    return out


def _probit(X, marginals):
    cols, clipped = [], 0
    for j, m in enumerate(marginals):
        u, c = m.to_normal(X[:, j], return_clipped=True)
        cols.append(u)
        clipped += c
    if clipped:
        warnings.warn(f"{clipped} CDF values clipped to [1e-12, 1 - 1e-12]", RuntimeWarning, stacklevel=3)
    return np.column_stack(cols) if cols else np.empty_like(X), clipped


def _unprobit(Y, marginals):
    return np.column_stack([m.from_normal(Y[:, j]) for j, m in enumerate(marginals)])


class IsoTransformer(TransformerMixin, BaseEstimator):
    """Map correlated physical inputs ``Z`` to independent standard normals ``U``.

    Parameters
    ----------
    kind : {'nataf', 'rosenblatt', 'identity'}
    marginals : list of MarginalModel, optional
        Estimated from the data passed to :meth:`fit` when omitted.
    dependence : DependenceModel, optional
        Estimated by normal scores from the data when omitted.
    ordering : sequence of int, optional
        Conditioning order for the Rosenblatt map; natural order by default.
    marginal_kind : str
        Kind used when marginals are estimated.
    """

    def __init__(self, kind="nataf", marginals=None, dependence=None, ordering=None,
                 marginal_kind="empirical"):
        self.kind = kind
        self.marginals = marginals
        self.dependence = dependence
        self.ordering = ordering
        self.marginal_kind = marginal_kind

    def fit(self, X=None, y=None):
        if self.kind not in TRANSFORM_KINDS:
            raise InputError(f"unknown transform kind {self.kind!r}")
        if X is not None:
            X = check_array(X, dtype=float)
        if self.marginals is None:
            if X is None:
                raise InputError("marginals must be given or estimated from data")
            marginals = [fit_marginal(X[:, j], self.marginal_kind) for j in range(X.shape[1])]
        else:
            marginals = list(self.marginals)
        D = len(marginals)
        if X is not None and X.shape[1] != D:
            raise InputError(f"X has {X.shape[1]} columns, {D} marginals given")
        if self.dependence is None:
            dep = DependenceModel.from_data(X) if X is not None else DependenceModel.independent(D)
        else:
            dep = self.dependence
        if dep.dim != D:
            raise InputError("dependence model dimension does not match marginals")
        order = np.arange(D) if self.ordering is None else np.asarray(self.ordering, dtype=np.int64)
        if sorted(order.tolist()) != list(range(D)):
            raise InputError("ordering must be a permutation of 0..D-1")

        self.marginals_ = marginals
        self.dependence_ = dep
        self.cholesky_ = dep.cholesky
        self.ordering_ = order
        self.n_features_in_ = D
        self._conditionals = _conditional_weights(dep.fictive_correlation, order)
        self.n_clipped_ = 0
        return self

    def _check(self, X):
        check_is_fitted(self, "marginals_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X

    def probit(self, X):
        """Marginal step only: ``Phi^-1(F_j(Z_j))`` per column, no decorrelation."""
        Y, self.n_clipped_ = _probit(self._check(X), self.marginals_)
        return Y

    def transform(self, X):
        X = self._check(X)
        if self.kind == "identity":
            return X.copy()
        if self.kind == "nataf":
            return nataf_forward(X, self)
        return rosenblatt_forward(X, self)

    def inverse_transform(self, U):
        U = self._check(U)
        if self.kind == "identity":
            return U.copy()
        if self.kind == "nataf":
            return nataf_inverse(U, self)
        return rosenblatt_inverse(U, self)


def _conditional_weights(R, order):
    """Regression weights and residual std of each input on its predecessors."""
    out = []
    for k, v in enumerate(order):
        prev = order[:k]
        if k == 0:
            out.append((prev, np.zeros(0), 1.0))
            continue
        w = np.linalg.solve(R[np.ix_(prev, prev)], R[prev, v])
        var = 1.0 - float(R[v, prev] @ w)
        if var <= 0:
            raise NumericalError("conditional variance is not positive", {"input": int(v)})
        out.append((prev, w, math.sqrt(var)))
    return out


def nataf_forward(Z, t):
    """``U = L^-1 Phi^-1(F(Z))`` row-wise, with ``L`` the Cholesky factor."""
    Y, t.n_clipped_ = _probit(np.asarray(Z, dtype=float), t.marginals_)
    return solve_triangular(t.cholesky_, Y.T, lower=True).T


def nataf_inverse(U, t):
    Y = np.asarray(U, dtype=float) @ t.cholesky_.T
    return _unprobit(Y, t.marginals_)


def rosenblatt_forward(Z, t):
    """Sequential conditional CDFs under the Gaussian copula.

    Column ``v`` of the output holds the standardized conditional residual of
    input ``v`` given the inputs before it in ``t.ordering_``.
    """
    Y, t.n_clipped_ = _probit(np.asarray(Z, dtype=float), t.marginals_)
    U = np.empty_like(Y)
    for v, (prev, w, s) in zip(t.ordering_, t._conditionals):
        U[:, v] = (Y[:, v] - Y[:, prev] @ w) / s
    return U


def rosenblatt_inverse(U, t):
    U = np.asarray(U, dtype=float)
    Y = np.empty_like(U)
    for v, (prev, w, s) in zip(t.ordering_, t._conditionals):
        Y[:, v] = Y[:, prev] @ w + s * U[:, v]
    return _unprobit(Y, t.marginals_)


def make_transform(kind, marginals, dependence, ordering=None):
    """Fitted :class:`IsoTransformer` from known marginals and dependence."""
    return IsoTransformer(kind, list(marginals), dependence, ordering).fit()


__all__ = [
    "IsoTransformer",
    "fictive_correlation",
    "make_transform",
    "nataf_forward",
    "nataf_inverse",
    "rosenblatt_forward",
    "rosenblatt_inverse",
]
