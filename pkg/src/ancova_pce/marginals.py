"""Marginal distributions, Gaussian-copula dependence and input sampling."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from ._parallel import concat_rows, map_chunks
from .exceptions import InputError, NumericalError

LOGGER = logging.getLogger(__name__)

KINDS = ("normal", "lognormal", "uniform", "beta", "empirical")

#: Highest polynomial degree the bases are built for by default.
P_MAX_DEFAULT = 5
#: Moments of order 0 .. 2*P_MAX_DEFAULT + 1 are kept on every marginal.
N_MOMENTS_DEFAULT = 2 * P_MAX_DEFAULT + 2

CDF_CLIP = 1e-12
SAMPLE_BLOCK_ROWS = 8192
MIN_FIT_SAMPLES = 10


def empirical_moments(samples, max_order):
    """Raw sample moments ``m_i = mean(x**i)`` for ``i = 0 .. max_order``.

    Sums are compensated (``math.fsum``) so that high orders stay usable for
    Hankel-matrix work downstream.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise InputError("empirical_moments needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise InputError("samples contain NaN or infinite values")
    if max_order < 0:
        raise InputError("max_order must be >= 0")
    out = np.empty(max_order + 1)
    out[0] = 1.0
    power = np.ones_like(x)
    for k in range(1, max_order + 1):
        power = power * x
        out[k] = math.fsum(power) / x.size
    return out


def _standardize_raw_moments(raw, mean, std, n):
    """Moments of ``(X - mean) / std`` from raw moments of ``X`` (binomial expansion)."""
    out = np.empty(n)
    for k in range(n):
        terms = [math.comb(k, i) * raw[i] * (-mean) ** (k - i) for i in range(k + 1)]
        out[k] = math.fsum(terms) / std**k
    out[0] = 1.0
    return out


def _normal_std_moments(n):
    out = np.zeros(n)
    out[0] = 1.0
    for k in range(2, n, 2):
        out[k] = out[k - 2] * (k - 1)
    return out


def _uniform_std_moments(n):
    out = np.zeros(n)
    for k in range(0, n, 2):
        out[k] = 3.0 ** (k / 2) / (k + 1)
    return out


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """One input's distribution.

    Parameters
    ----------
    kind : str
        One of ``normal``, ``lognormal``, ``uniform``, ``beta``, ``empirical``.
    params : dict
        ``normal``: ``mean``, ``std``; ``lognormal``: ``mu``, ``sigma`` of the
        underlying normal; ``uniform``: ``lower``, ``upper``; ``beta``:
        ``alpha``, ``beta``, ``lower``, ``upper``; ``empirical``: ``knots``
        and ``probs`` of the smoothed ECDF plus ``moments``/``std_moments``
        computed from the original sample.
    n_moments : int
        Number of raw moments (orders ``0 .. n_moments - 1``) to keep.
    """

    kind: str
    params: dict
    n_moments: int = N_MOMENTS_DEFAULT
    raw_moments: np.ndarray = field(init=False, repr=False)
    support: tuple = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown marginal kind {self.kind!r}; expected one of {KINDS}")
        params = {k: (np.asarray(v, dtype=float) if isinstance(v, (list, np.ndarray)) else float(v))
                  for k, v in self.params.items()}
        object.__setattr__(self, "params", params)
        dist = None
        if self.kind == "normal":
            if not params["std"] > 0:
                raise InputError("normal marginal needs std > 0")
            dist = stats.norm(loc=params["mean"], scale=params["std"])
        elif self.kind == "lognormal":
            if not params["sigma"] > 0:
                raise InputError("lognormal marginal needs sigma > 0")
            dist = stats.lognorm(s=params["sigma"], scale=math.exp(params["mu"]))
        elif self.kind == "uniform":
            if not params["upper"] > params["lower"]:
                raise InputError("uniform marginal needs upper > lower")
            dist = stats.uniform(loc=params["lower"], scale=params["upper"] - params["lower"])
        elif self.kind == "beta":
            if not (params["alpha"] > 0 and params["beta"] > 0 and params["upper"] > params["lower"]):
                raise InputError("beta marginal needs alpha, beta > 0 and upper > lower")
            dist = stats.beta(params["alpha"], params["beta"], loc=params["lower"],
                              scale=params["upper"] - params["lower"])
        else:
            knots, probs = params["knots"], params["probs"]
            if knots.ndim != 1 or knots.size < 3 or np.any(np.diff(knots) <= 0):
                raise InputError("empirical marginal needs >= 3 strictly increasing knots")
            if probs.shape != knots.shape or probs[0] != 0.0 or probs[-1] != 1.0 or np.any(np.diff(probs) <= 0):
                raise InputError("empirical marginal probabilities must increase from 0 to 1")
        object.__setattr__(self, "_dist", dist)

        n = int(self.n_moments)
        if dist is not None:
            mean, std = float(dist.mean()), float(dist.std())
            raw, std_m = self._parametric_moments(dist, mean, std, n)
            support = (float(dist.support()[0]), float(dist.support()[1]))
        else:
            raw = np.asarray(params["moments"], dtype=float)[:n]
            std_m = np.asarray(params["std_moments"], dtype=float)[:n]
            if raw.size < n or std_m.size < n:
                raise InputError("empirical marginal carries too few moments")
            mean = raw[1]
            std = math.sqrt(max(raw[2] - raw[1] ** 2, 0.0)) if "std" not in params else params["std"]
            support = (float(params["knots"][0]), float(params["knots"][-1]))
        if raw[0] != 1.0:
            raise InputError("raw_moments[0] must equal 1")
        if not std > 0:
            raise InputError("degenerate marginal: zero variance")
        object.__setattr__(self, "raw_moments", raw)
        object.__setattr__(self, "_std_moments", std_m)
        object.__setattr__(self, "_mean", float(mean))
        object.__setattr__(self, "_std", float(std))
        object.__setattr__(self, "support", support)

    def _parametric_moments(self, dist, mean, std, n):
        if self.kind == "lognormal":
            mu, sig = self.params["mu"], self.params["sigma"]
            raw = np.array([math.exp(k * mu + 0.5 * (k * sig) ** 2) for k in range(n)])
        else:
            raw = np.array([1.0] + [float(dist.moment(k)) for k in range(1, n)])
        if self.kind == "normal":
            std_m = _normal_std_moments(n)
        elif self.kind == "uniform":
            std_m = _uniform_std_moments(n)
        else:
            std_m = _standardize_raw_moments(raw, mean, std, n)
        return raw, std_m

    # -- constructors -------------------------------------------------------
    @classmethod
    def normal(cls, mean=0.0, std=1.0, **kw):
        return cls("normal", {"mean": mean, "std": std}, **kw)

    @classmethod
    def lognormal(cls, mu=0.0, sigma=1.0, **kw):
        return cls("lognormal", {"mu": mu, "sigma": sigma}, **kw)

    @classmethod
    def uniform(cls, lower=0.0, upper=1.0, **kw):
        return cls("uniform", {"lower": lower, "upper": upper}, **kw)

    @classmethod
    def beta(cls, alpha, beta, lower=0.0, upper=1.0, **kw):
        return cls("beta", {"alpha": alpha, "beta": beta, "lower": lower, "upper": upper}, **kw)

    @classmethod
    def empirical(cls, samples, n_moments=N_MOMENTS_DEFAULT):
        """Smoothed ECDF: linear interpolation between mid-rank probabilities
        of the sorted unique values, extended by one spacing at each end."""
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        values, counts = np.unique(x, return_counts=True)
        if values.size < 2:
            raise InputError("degenerate sample: zero variance")
        cum = np.cumsum(counts)
        mid = (cum - counts / 2.0) / x.size
        lower = values[0] - (values[1] - values[0])
        upper = values[-1] + (values[-1] - values[-2])
        knots = np.concatenate([[lower], values, [upper]])
        probs = np.concatenate([[0.0], mid, [1.0]])
        mean = math.fsum(x) / x.size
        std = math.sqrt(math.fsum((x - mean) ** 2) / x.size)
        params = {
            "knots": knots,
            "probs": probs,
            "moments": empirical_moments(x, n_moments - 1),
            "std_moments": empirical_moments((x - mean) / std, n_moments - 1),
            "std": std,
        }
        return cls("empirical", params, n_moments=n_moments)

    @classmethod
    def from_spec(cls, spec):
        return cls(spec["kind"], dict(spec["params"]), n_moments=int(spec.get("n_moments", N_MOMENTS_DEFAULT)))

    def to_spec(self):
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "n_moments": int(self.n_moments)}

    # -- moments ------------------------------------------------------------
    @property
    def mean(self):
        return self._mean

    @property
    def std(self):
        return self._std

    def standardized_moments(self, n=None):
        """Raw moments of ``(X - mean) / std``, orders ``0 .. n - 1``.

        Parametric kinds compute any order; empirical marginals are limited
        to the orders stored at construction.
        """
        n = self.n_moments if n is None else n
        if n > self._std_moments.size and self._dist is not None:
            # parametric kinds extend on demand
            return self._parametric_moments(self._dist, self._mean, self._std, n)[1]
        if n > self._std_moments.size:
            raise InputError(f"only {self._std_moments.size} moments stored, {n} requested")
        return self._std_moments[:n].copy()

    # -- distribution functions --------------------------------------------
    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self._dist is not None:
            return self._dist.cdf(x)
        return np.interp(x, self.params["knots"], self.params["probs"], left=0.0, right=1.0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        if self._dist is not None:
            return self._dist.sf(x)
        return 1.0 - self.cdf(x)

    def icdf(self, p):
        p = np.asarray(p, dtype=float)
        if self._dist is not None:
            return self._dist.ppf(p)
        return np.interp(p, self.params["probs"], self.params["knots"])

    def isf(self, q):
        q = np.asarray(q, dtype=float)
        if self._dist is not None:
            return self._dist.isf(q)
        return self.icdf(1.0 - q)

    def to_normal(self, x, return_clipped=False):
        """Probit of the CDF, ``Phi^-1(F(x))``, evaluated on the safer tail."""
        x = np.asarray(x, dtype=float)
        n_clipped = 0
        if self.kind == "normal":
            u = (x - self.params["mean"]) / self.params["std"]
        elif self.kind == "lognormal":
            with np.errstate(divide="ignore", invalid="ignore"):
                u = (np.log(x) - self.params["mu"]) / self.params["sigma"]
            bad = ~np.isfinite(u)
            n_clipped = int(np.count_nonzero(bad))
            u = np.where(bad, np.where(x <= 0, ndtri(CDF_CLIP), -ndtri(CDF_CLIP)), u)
        else:
            p = self.cdf(x)
            q = self.sf(x)
            n_clipped = int(np.count_nonzero((np.minimum(p, q) < CDF_CLIP)))
            p = np.clip(p, CDF_CLIP, 1.0 - CDF_CLIP)
            q = np.clip(q, CDF_CLIP, 1.0 - CDF_CLIP)
            u = np.where(p < 0.5, ndtri(p), -ndtri(q))
        if return_clipped:
            return u, n_clipped
        return u

    def from_normal(self, u):
        """Inverse of :meth:`to_normal`: ``F^-1(Phi(u))``."""
        u = np.asarray(u, dtype=float)
        if self.kind == "normal":
            return self.params["mean"] + self.params["std"] * u
        if self.kind == "lognormal":
            return np.exp(self.params["mu"] + self.params["sigma"] * u)
        lo = np.clip(ndtr(u), CDF_CLIP, 1.0 - CDF_CLIP)
        hi = np.clip(ndtr(-u), CDF_CLIP, 1.0 - CDF_CLIP)
        return np.where(u < 0, self.icdf(lo), self.isf(hi))

    def __repr__(self):
        if self.kind == "empirical":
            return f"MarginalModel(kind='empirical', n_knots={self.params['knots'].size})"
        return f"MarginalModel(kind={self.kind!r}, params={self.params!r})"


def fit_marginal(samples, kind="empirical", n_moments=N_MOMENTS_DEFAULT):
    """Fit a marginal of the given kind to a 1-D sample."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise InputError(f"fit_marginal needs at least {MIN_FIT_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("samples contain NaN or infinite values")
    if np.ptp(x) == 0.0:
        raise InputError("degenerate sample: zero variance")
    if kind == "normal":
        return MarginalModel.normal(float(np.mean(x)), float(np.std(x, ddof=1)), n_moments=n_moments)
    if kind == "lognormal":
        if np.any(x <= 0):
            raise InputError("lognormal fit needs strictly positive samples")
        logx = np.log(x)
        return MarginalModel.lognormal(float(np.mean(logx)), float(np.std(logx, ddof=1)), n_moments=n_moments)
    if kind == "uniform":
        pad = np.ptp(x) / (x.size - 1)
        return MarginalModel.uniform(float(x.min() - pad), float(x.max() + pad), n_moments=n_moments)
    if kind == "beta":
        pad = np.ptp(x) / (x.size - 1)
        lower, upper = float(x.min() - pad), float(x.max() + pad)
        a, b, _, _ = stats.beta.fit(x, floc=lower, fscale=upper - lower)
        return MarginalModel.beta(a, b, lower, upper, n_moments=n_moments)
    if kind == "empirical":
        return MarginalModel.empirical(x, n_moments=n_moments)
    raise InputError(f"unknown marginal kind {kind!r}")


def _check_correlation(R, name):
    R = np.array(R, dtype=float, ndmin=2)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise InputError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(R)):
        raise InputError(f"{name} contains non-finite entries")
    if not np.allclose(R, R.T, atol=1e-12, rtol=0):
        raise InputError(f"{name} must be symmetric")
    if not np.all(np.diag(R) == 1.0):
        raise InputError(f"{name} must have a unit diagonal")
    R = 0.5 * (R + R.T)
    eig = np.linalg.eigvalsh(R)
    if eig[0] <= 1e-10:
        raise NumericalError(f"{name} is not positive definite",
                             {"matrix": name, "min_eigenvalue": float(eig[0])})
    R.setflags(write=False)
    return R


@dataclass(frozen=True, eq=False)
class DependenceModel:
    """Gaussian-copula dependence over D inputs.

    ``copula_correlation`` is the correlation the user asked for in physical
    space (Pearson, for the Nataf model) and ``fictive_correlation`` is the
    Gaussian-space parameter that reproduces it; the latter drives sampling
    and the isoprobabilistic transforms. When ``fictive_correlation`` is
    omitted, the two coincide (the copula parameter was given directly).
    """

    copula_correlation: np.ndarray
    fictive_correlation: np.ndarray = None

    def __post_init__(self):
        copula = _check_correlation(self.copula_correlation, "copula_correlation")
        fictive = copula if self.fictive_correlation is None else _check_correlation(
            self.fictive_correlation, "fictive_correlation")
        if fictive.shape != copula.shape:
            raise InputError("copula and fictive correlation shapes differ")
        object.__setattr__(self, "copula_correlation", copula)
        object.__setattr__(self, "fictive_correlation", fictive)
        chol = np.linalg.cholesky(fictive)
        chol.setflags(write=False)
        object.__setattr__(self, "cholesky", chol)

    @property
    def dim(self):
        return self.fictive_correlation.shape[0]

    @property
    def is_independent(self):
        return bool(np.all(self.fictive_correlation == np.eye(self.dim)))

    @classmethod
    def independent(cls, dim):
        return cls(np.eye(dim))

    @classmethod
    def equicorrelated(cls, dim, rho, marginals=None):
        R = np.full((dim, dim), float(rho))
        np.fill_diagonal(R, 1.0)
        if marginals is None:
            return cls(R)
        return cls.from_pearson(marginals, R)

    @classmethod
    def from_pearson(cls, marginals, target):
        """Nataf model: solve the fictive correlation for a target Pearson matrix."""
        from .transforms import fictive_correlation

        target = _check_correlation(target, "target correlation")
        return cls(target, fictive_correlation(marginals, target))

    @classmethod
    def from_data(cls, X):
        """Gaussian-rank (normal scores) estimate of the copula from data."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 3:
            raise InputError("need a 2-D sample with at least 3 rows")
        ranks = stats.rankdata(X, axis=0)
        scores = ndtri(ranks / (X.shape[0] + 1.0))
        fictive = np.corrcoef(scores, rowvar=False)
        pearson = np.corrcoef(X, rowvar=False)
        fictive, pearson = np.atleast_2d(fictive), np.atleast_2d(pearson)
        np.fill_diagonal(fictive, 1.0)
        np.fill_diagonal(pearson, 1.0)
        return cls(0.5 * (pearson + pearson.T), 0.5 * (fictive + fictive.T))

    def to_spec(self):
        return {"copula_correlation": self.copula_correlation.tolist(),
                "fictive_correlation": self.fictive_correlation.tolist()}

    @classmethod
    def from_spec(cls, spec):
        return cls(np.asarray(spec["copula_correlation"]), np.asarray(spec["fictive_correlation"]))


@dataclass
class SampleMatrix:
    """Input table as read from CSV: values plus column labels."""

    values: np.ndarray
    column_names: list
    response: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise InputError("a sample matrix needs M >= 1 rows and D >= 1 columns")
        if len(self.column_names) != self.values.shape[1]:
            raise InputError("column_names length does not match the number of columns")
        if not np.all(np.isfinite(self.values)):
            raise InputError("sample matrix contains non-finite values")

    @property
    def shape(self):
        return self.values.shape


def read_csv(path, response="response", require_response=False):
    """Read a header-first CSV of inputs with an optional ``response`` column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise InputError(f"{path}: duplicate column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{path}: row {lineno} has a non-numeric entry") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}: row {lineno} has a non-finite entry")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    data = np.array(rows)
    if response in header:
        if header[-1] != response:
            raise InputError(f"{path}: column {response!r} must be the last column")
        return SampleMatrix(data[:, :-1], header[:-1], data[:, -1])
    if require_response:
        raise InputError(f"{path}: missing column {response!r}")
    return SampleMatrix(data, header)


def _block_rng(seed, stream, index):
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(ss))


def lhs_uniform(M, D, seed, n_jobs=1):
    """Latin hypercube design on the unit cube: one point per stratum and column."""
    if M < 1 or D < 1:
        raise InputError("LHS needs M >= 1 and D >= 1")
    perms = np.column_stack([_block_rng(seed, 0, j).permutation(M) for j in range(D)])

    def block(b, rows):
        jitter = _block_rng(seed, 1, b).random((rows.stop - rows.start, D))
        return (perms[rows] + jitter) / M

    u = concat_rows(map_chunks(block, M, n_jobs, SAMPLE_BLOCK_ROWS), (0, D))
    return np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)


def sample_correlated(marginals, dep, M, seed, design="lhs", n_jobs=1):
    """Draw ``M`` rows with the given marginals and Gaussian-copula dependence.

    Rows are produced in fixed blocks, each with its own counter-based
    (Philox) substream, so the output is bitwise identical for any ``n_jobs``.
    """
    marginals = list(marginals)
    D = len(marginals)
    if D == 0:
        raise InputError("need at least one marginal")
    if dep is None:
        dep = DependenceModel.independent(D)
    if dep.dim != D:
        raise InputError(f"dependence model has dimension {dep.dim}, marginals {D}")
    M = int(M)
    if M < 1:
        raise InputError("sample size M must be >= 1")
    if design not in ("lhs", "plain"):
        raise InputError(f"unknown design {design!r}")
    L = dep.cholesky

    if design == "lhs":
        normals = ndtri(lhs_uniform(M, D, seed, n_jobs))

    def block(b, rows):
        if design == "lhs":
            z = normals[rows]
        else:
            z = _block_rng(seed, 2, b).standard_normal((rows.stop - rows.start, D))
        y = z @ L.T
        return np.column_stack([m.from_normal(y[:, j]) for j, m in enumerate(marginals)])

    X = concat_rows(map_chunks(block, M, n_jobs, SAMPLE_BLOCK_ROWS), (0, D))
    if not np.all(np.isfinite(X)):
        warnings.warn("non-finite values produced while sampling", RuntimeWarning, stacklevel=2)
    return X
