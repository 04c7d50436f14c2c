"""HDMR extraction, ANCOVA and Sobol indices, and smoothing studies."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._parallel import chunk_slices, map_chunks
from .basis import BasisSet, UnivariateBasis
from .exceptions import InputError, NumericalError

LOGGER = logging.getLogger(__name__)

ML_DEFAULT = 10_000
VAR_MIN = 1e-14


@dataclass(frozen=True)
class HdmrTerm:
    """Sub-expansion of the terms whose support is exactly ``subset``.

    ``rows`` index into the model's multi-indices and ``coefficients`` are the
    matching expansion coefficients.
    """

    subset: tuple
    rows: tuple
    multi_indices: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)

    @property
    def order(self):
        return len(self.subset)


def _group_by_support(multi_indices, coef):
    groups = {}
    for r, k in enumerate(np.asarray(multi_indices)):
        support = tuple(int(j) for j in np.nonzero(k)[0])
        if not support or coef[r] == 0.0:
            continue
        groups.setdefault(support, []).append(r)
    # singletons first, then by order, then lexicographically
    return dict(sorted(groups.items(), key=lambda kv: (len(kv[0]), kv[0])))


def extract_hdmr(model):
    """HDMR terms ``G_beta`` of a fitted expansion, grouped by multi-index support.

    The constant term is excluded; each nonzero coefficient lands in exactly
    one term.
    """
    idx = np.asarray(model.multi_indices_)
    coef = np.asarray(model.coef_)
    return [HdmrTerm(s, tuple(rows), idx[rows], coef[rows])
            for s, rows in _group_by_support(idx, coef).items()]


@dataclass
class AncovaReport:
    """Per-input ANCOVA indices and the moments of the surrogate response.

    ``S = S_U + S_C`` holds exactly; ``sum_check`` is the sum of the
    covariance shares of every HDMR term (1 up to rounding when the terms
    decompose the response), of which ``interaction_share`` is the part
    carried by terms with two or more inputs.
    """

    strategy: str
    M_L: int
    mean: float
    variance: float
    S: np.ndarray
    S_U: np.ndarray
    S_C: np.ndarray
    sum_check: float
    interaction_share: float
    input_names: list
    smoothing: dict = None

    @property
    def ranking(self):
        """Inputs by ``S`` descending; ties broken by ``S_U`` then input order."""
        return [int(i) for i in np.lexsort((np.arange(self.S.size), -self.S_U, -self.S))]

    def to_dict(self):
        doc = {
            "strategy": self.strategy,
            "M_L": int(self.M_L),
            "mean": float(self.mean),
            "variance": float(self.variance),
            "sum_check": float(self.sum_check),
            "interaction_share": float(self.interaction_share),
            "indices": [{"input": name, "S": float(s), "S_U": float(u), "S_C": float(c)}
                        for name, s, u, c in zip(self.input_names, self.S, self.S_U, self.S_C)],
            "ranking": [self.input_names[i] for i in self.ranking],
        }
        if self.smoothing is not None:
            doc["smoothing"] = self.smoothing
        return doc

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["input", "S", "S_U", "S_C"])
        for name, s, u, c in zip(self.input_names, self.S, self.S_U, self.S_C):
            w.writerow([name, "%.17g" % s, "%.17g" % u, "%.17g" % c])
        return buf.getvalue()


def report_from_terms(y, terms, D, strategy="", input_names=None):
    """Assemble an :class:`AncovaReport` from response samples and HDMR term samples.

    Parameters
    ----------
    y : array, shape (M,)
        Response samples.
    terms : dict
        Maps a subset tuple to the sampled term values, shape (M,).
    D : int
        Number of inputs; singletons absent from ``terms`` get zero indices.
    """
    y = np.asarray(y, dtype=float)
    M = y.size
    if M < 2:
        raise InputError("need at least 2 evaluation samples")
    var = float(np.var(y, ddof=1))
    if var < VAR_MIN:
        raise NumericalError("response variance is degenerate", {"variance": var})
    yc = y - y.mean()
    S = np.zeros(D)
    S_U = np.zeros(D)
    total = 0.0
    inter = 0.0
    for subset, g in terms.items():
        g = np.asarray(g, dtype=float)
        share = float(g @ yc) / (M - 1) / var
        total += share
        if len(subset) == 1:
            j = subset[0]
            S[j] = share
            S_U[j] = float(np.var(g, ddof=1)) / var
        else:
            inter += share
    names = list(input_names) if input_names is not None else [f"Z{j + 1}" for j in range(D)]
    return AncovaReport(strategy, M, float(y.mean()), var, S, S_U, S - S_U, total, inter, names)


def _term_matrix(basis, coef, groups):
    """Sparse-by-construction aggregation matrix: column t sums the rows of group t."""
    A = np.zeros((basis.size, len(groups)))
    for t, rows in enumerate(groups.values()):
        A[rows, t] = coef[rows]
    return A


def expansion_report(basis, coef, points, strategy="", input_names=None, n_jobs=1):
    """ANCOVA report of the expansion ``basis``/``coef`` evaluated at ``points``.

    Works in fixed row chunks so the ``M x L`` design matrix is never held
    whole; interaction terms only contribute their covariance share.
    """
    coef = np.asarray(coef, dtype=float)
    points = np.asarray(points, dtype=float)
    M, D = points.shape
    groups = _group_by_support(basis.multi_indices, coef)
    subsets = list(groups)
    A = _term_matrix(basis, coef, groups)
    singles = [t for t, s in enumerate(subsets) if len(s) == 1]

    def block(_, rows):
        P = basis.evaluate(points[rows])
        G = P @ A
        return P @ coef, G

    parts = map_chunks(block, M, n_jobs)
    y = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    if M < 2:
        raise InputError("need at least 2 evaluation samples")
    var = float(np.var(y, ddof=1))
    if var < VAR_MIN:
        raise NumericalError("response variance is degenerate", {"variance": var})
    yc = y - y.mean()
    cov = np.zeros(len(subsets))
    for (_, G), sl in zip(parts, chunk_slices(M)):
        cov += yc[sl] @ G
    G1 = np.concatenate([G[:, singles] for _, G in parts]) if singles else np.zeros((M, 0))

    S = np.zeros(D)
    S_U = np.zeros(D)
    inter = 0.0
    for t, s in enumerate(subsets):
        share = cov[t] / (M - 1) / var
        if len(s) == 1:
            S[s[0]] = share
        else:
            inter += share
    for c, t in enumerate(singles):
        S_U[subsets[t][0]] = float(np.var(G1[:, c], ddof=1)) / var
    names = list(input_names) if input_names is not None else [f"Z{j + 1}" for j in range(D)]
    return AncovaReport(strategy, M, float(y.mean()), var, S, S_U, S - S_U,
                        float(cov.sum() / (M - 1) / var), float(inter), names)


def physical_reexpansion(model, Z, n_jobs=1):
    """Least-squares projection of the fully transformed surrogate onto a physical-space basis.

    The expansion lives on the decorrelated variables, so its HDMR terms are
    not functions of single physical inputs. Projecting ``G(T(Z))`` onto the
    total-degree basis built from the physical marginals restores that
    meaning. Returns ``(basis, coef)``.
    """
    Z = np.asarray(Z, dtype=float)
    p = int(model.fit_info_["p_selected"])
    univariates = [UnivariateBasis.from_marginal(m, p) for m in model.marginals_]
    basis = BasisSet.total_degree(univariates, p)
    if Z.shape[0] <= 2 * basis.size:
        raise InputError(f"re-expansion on {basis.size} terms needs more than {2 * basis.size} samples")
    y = model.predict(Z, faithful=True)
    Psi = basis.evaluate(Z, n_jobs=n_jobs)
    coef, *_ = np.linalg.lstsq(Psi, y, rcond=None)
    return basis, coef


def ancova_indices(model, Z, faithful=False, input_names=None, n_jobs=1):
    """Sample-based ANCOVA indices of a fitted expansion on physical inputs ``Z``.

    With ``faithful=False`` models built on decorrelated inputs are analyzed
    under the substitution semantics of :meth:`PCERegressor.predict`. With
    ``faithful=True`` they are first re-expanded on the physical inputs, see
    :func:`physical_reexpansion`.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise InputError("evaluation sample must be a non-empty 2-D array")
    if Z.shape[0] < 1000:
        LOGGER.warning("ANCOVA on only %d evaluation samples", Z.shape[0])
    if faithful and model.strategy != "correlate":
        basis, coef = physical_reexpansion(model, Z, n_jobs)
        points = Z
    else:
        basis, coef = model.basis_, model.coef_
        points = model.analysis_coordinates(Z, faithful=False)
    return expansion_report(basis, coef, points, model.strategy, input_names, n_jobs)


def sobol_indices(model, Z=None):
    """First-order and total Sobol indices from the expansion coefficients.

    Only meaningful for an orthonormal basis on independent variables. A
    warning is raised for ``correlate`` models whose inputs are known (from
    the dependence model or the optional sample ``Z``) to be correlated.
    """
    if model.strategy == "correlate":
        correlated = not model.dependence_.is_independent
        if Z is not None and not correlated:
            R = np.corrcoef(np.asarray(Z, dtype=float), rowvar=False)
            off = np.abs(R - np.eye(R.shape[0]))
            correlated = bool(off.max() > 5.0 / math.sqrt(len(Z)))
        if correlated:
            warnings.warn("coefficient-based Sobol indices lack a variance meaning for correlated "
                          "inputs", RuntimeWarning, stacklevel=2)
    idx = np.asarray(model.multi_indices_)
    a2 = np.asarray(model.coef_) ** 2
    nonconst = idx.any(axis=1)
    var = float(a2[nonconst].sum())
    D = idx.shape[1]
    if var == 0.0:
        return {"first": np.zeros(D), "total": np.zeros(D), "variance": 0.0}
    nnz = np.count_nonzero(idx, axis=1)
    first = np.array([a2[(nnz == 1) & (idx[:, j] > 0)].sum() for j in range(D)]) / var
    total = np.array([a2[idx[:, j] > 0].sum() for j in range(D)]) / var
    return {"first": first, "total": total, "variance": var}


def _respond(obj, Z):
    if hasattr(obj, "predict"):
        return np.asarray(obj.predict(Z), dtype=float)
    if hasattr(obj, "evaluate"):
        return np.asarray(obj.evaluate(Z), dtype=float)
    if callable(obj):
        return np.asarray(obj(Z), dtype=float)
    raise InputError("model must provide predict, evaluate or be callable")


def smooth_and_requantify(model, Z, smooth_set, reference=None, means=None):
    """Standard deviation of the response before and after fixing inputs at their means.

    Parameters
    ----------
    model : PCERegressor, TestModel or callable
        Response model used for the study.
    Z : array, shape (M, D)
        Physical input sample; smoothed columns are replaced by their means
        while the other columns keep their joint draws.
    smooth_set : iterable of int
        Inputs smoothed jointly.
    reference : TestModel or callable, optional
        True model; enables ``delta_sigma_rr`` and ``delta_sigma_re``.
    means : array, optional
        Values used for the smoothed columns. Defaults to the model's
        marginal means, or the sample means.

    Returns
    -------
    dict
        ``sigma_before``, ``sigma_after``, ``delta_sigma_pct`` (percent), and
        with a reference also ``sigma_before_ref``, ``sigma_after_ref``,
        ``delta_sigma_pct_ref``, ``delta_sigma_rr`` (percent) and
        ``delta_sigma_re`` (fraction).
    """
    Z = np.asarray(Z, dtype=float)
    D = Z.shape[1]
    subset = sorted({int(j) for j in smooth_set})
    if not subset:
        raise InputError("smoothing set is empty")
    if subset[0] < 0 or subset[-1] >= D:
        raise InputError(f"smoothing set {subset} outside inputs 0..{D - 1}")
    if means is None:
        source = getattr(model, "marginals_", None) or getattr(reference, "marginals", None)
        means = (np.array([m.mean for m in source]) if source is not None else Z.mean(axis=0))
    means = np.asarray(means, dtype=float)
    Zs = Z.copy()
    Zs[:, subset] = means[subset]

    all_smoothed = len(subset) == D

    def sigmas(obj):
        before = float(np.std(_respond(obj, Z), ddof=1))
        # identical rows: report the deterministic response exactly, not rounding noise
        after = 0.0 if all_smoothed else float(np.std(_respond(obj, Zs), ddof=1))
        if before == 0.0:
            raise NumericalError("response has zero standard deviation before smoothing")
        return before, after

    before, after = sigmas(model)
    out = {
        "smooth_set": subset,
        "all_smoothed": all_smoothed,
        "sigma_before": before,
        "sigma_after": after,
        "delta_sigma_pct": 100.0 * (after - before) / before,
    }
    if out["all_smoothed"]:
        LOGGER.info("every input smoothed; the response is deterministic")
    if reference is not None:
        rb, ra = sigmas(reference)
        d_ref = (ra - rb) / rb
        out.update({
            "sigma_before_ref": rb,
            "sigma_after_ref": ra,
            "delta_sigma_pct_ref": 100.0 * d_ref,
            "delta_sigma_rr": 100.0 * (after - ra) / ra if ra > 0 else math.nan,
            "delta_sigma_re": ((after - before) / before - d_ref) / d_ref if d_ref != 0 else math.nan,
        })
    return out


def render_index_table(rows, input_names=None, decimals=4, sum_column=True):
    """Plain-text table of indices: one row per strategy, one column per input.

    ``rows`` maps a row label to a sequence of per-input values. A trailing
    column carries the row sum of the rounded values.
    """
    rows = {str(k): [float(v) for v in vals] for k, vals in rows.items()}
    if not rows:
        raise InputError("no rows to render")
    D = len(next(iter(rows.values())))
    if any(len(v) != D for v in rows.values()):
        raise InputError("rows have different lengths")
    names = list(input_names) if input_names is not None else [f"Z{j + 1}" for j in range(D)]
    header = ["Input"] + names + (["Sum"] if sum_column else [])
    body = []
    for label, vals in rows.items():
        rounded = [round(v, decimals) for v in vals]
        cells = [f"{v:.{decimals}f}" for v in rounded]
        if sum_column:
            cells.append(f"{round(math.fsum(rounded), decimals):.{decimals}f}")
        body.append([label] + cells)
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    fmt = lambda r: " | ".join(s.ljust(w) if i == 0 else s.rjust(w)
                               for i, (s, w) in enumerate(zip(r, widths)))
    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"
