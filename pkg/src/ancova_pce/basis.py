"""Moment-based orthonormal polynomials and total-degree tensor bases."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._parallel import concat_rows, map_chunks
from .exceptions import InputError, NumericalError

LOGGER = logging.getLogger(__name__)

HANKEL_RCOND_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class UnivariateBasis:
    """Orthonormal polynomials ``phi_0 .. phi_p`` of ``t = (x - loc) / scale``.

    Monic three-term recurrence ``pi_{k+1}(t) = (t - a_k) pi_k(t) - b_k pi_{k-1}(t)``
    with ``a`` of length ``p`` and ``b`` of length ``p + 1`` (``b[0]`` is the
    total mass, 1). The orthonormal polynomials are ``pi_k / sqrt(b_0 ... b_k)``.
    """

    a: np.ndarray
    b: np.ndarray
    loc: float = 0.0
    scale: float = 1.0
    degree: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if b.size != a.size + 1:
            raise InputError("recurrence needs len(b) == len(a) + 1")
        if np.any(b <= 0):
            raise NumericalError("recurrence coefficient b_k must be positive",
                                 {"b": b.tolist()})
        if not self.scale > 0:
            raise InputError("scale must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "loc", float(self.loc))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "degree", int(a.size))

    def evaluate(self, x, degree=None):
        """Values of ``phi_0 .. phi_degree`` at ``x``; shape ``(len(x), degree + 1)``."""
        degree = self.degree if degree is None else int(degree)
        if degree > self.degree:
            raise InputError(f"basis only built up to degree {self.degree}")
        t = (np.asarray(x, dtype=float).ravel() - self.loc) / self.scale
        out = np.empty((t.size, degree + 1))
        sb = np.sqrt(self.b)
        out[:, 0] = 1.0 / sb[0]
        if degree >= 1:
            out[:, 1] = (t - self.a[0]) * out[:, 0] / sb[1]
        for k in range(1, degree):
            out[:, k + 1] = ((t - self.a[k]) * out[:, k] - sb[k] * out[:, k - 1]) / sb[k + 1]
        return out

    def to_spec(self):
        return {"a": self.a.tolist(), "b": self.b.tolist(), "loc": self.loc, "scale": self.scale}

    @classmethod
    def from_spec(cls, spec):
        return cls(np.asarray(spec["a"]), np.asarray(spec["b"]), spec["loc"], spec["scale"])

    @classmethod
    def from_marginal(cls, marginal, p):
        """Basis orthonormal w.r.t. a :class:`MarginalModel` (standardized internally)."""
        return build_univariate_basis(marginal.standardized_moments(2 * p + 1), p,
                                      loc=marginal.mean, scale=marginal.std)

    @classmethod
    def from_samples(cls, x, p):
        """Basis orthonormal w.r.t. the empirical measure of ``x``."""
        from .marginals import empirical_moments

        x = np.asarray(x, dtype=float).ravel()
        loc = math.fsum(x) / x.size
        scale = math.sqrt(math.fsum((x - loc) ** 2) / x.size)
        if not scale > 0:
            raise InputError("degenerate sample: zero variance")
        return build_univariate_basis(empirical_moments((x - loc) / scale, 2 * p + 1), p,
                                      loc=loc, scale=scale)


def build_univariate_basis(moments, p, loc=0.0, scale=1.0):
    """Three-term recurrence from raw moments via Cholesky of the Hankel matrix.

    ``moments`` are the raw moments ``m_0 .. m_{2p}`` (at least ``2p + 1``
    values) of the variable ``(x - loc) / scale``. If the Hankel matrix is too
    ill-conditioned the degree is reduced with a warning; an indefinite
    Hankel matrix means the sequence is not a moment sequence and raises.
    """
    m = np.asarray(moments, dtype=float).ravel()
    p = int(p)
    if p < 0:
        raise InputError("degree p must be >= 0")
    if m.size < 2 * p + 1:
        raise InputError(f"need {2 * p + 1} moments for degree {p}, got {m.size}")
    if not np.all(np.isfinite(m)):
        raise InputError("moments must be finite")
    if m[0] != 1.0:
        raise InputError("moments must describe a probability measure (m_0 == 1)")

    requested = p
    while True:
        n = p + 1
        H = m[np.add.outer(np.arange(n), np.arange(n))]
        eig = np.linalg.eigvalsh(H)
        if eig[0] < -1e-12 * eig[-1]:
            raise NumericalError("moment sequence is invalid (indefinite Hankel matrix)",
                                 {"degree": p, "min_eigenvalue": float(eig[0])})
        if p == 0 or eig[0] / eig[-1] >= HANKEL_RCOND_MIN:
            break
        p -= 1
    if p < requested:
        warnings.warn(f"Hankel matrix ill-conditioned; degree reduced from {requested} to {p}",
                      RuntimeWarning, stacklevel=2)

    R = np.linalg.cholesky(H).T
    d = np.diag(R)
    a = np.empty(p)
    for k in range(p):
        a[k] = R[k, k + 1] / d[k] - (R[k - 1, k] / d[k - 1] if k > 0 else 0.0)
    b = np.empty(p + 1)
    b[0] = m[0]
    b[1:] = (d[1:] / d[:-1]) ** 2
    return UnivariateBasis(a, b, loc, scale)


def total_degree_count(D, p):
    return math.comb(D + p, p)


def total_degree_indices(D, p):
    """All multi-indices with ``|k|_1 <= p`` in graded-lexicographic order.

    Within one total degree, indices are sorted lexicographically descending,
    so ``D=2, p=1`` gives ``(0,0), (1,0), (0,1)``.
    """
    D, p = int(D), int(p)
    if D < 1 or p < 0:
        raise InputError("need D >= 1 and p >= 0")
    out = np.zeros((total_degree_count(D, p), D), dtype=np.int64)
    row = 1
    for degree in range(1, p + 1):
        for comp in _compositions(degree, D):
            out[row] = comp
            row += 1
    return out


def _compositions(n, parts):
    """Weak compositions of ``n`` into ``parts`` in descending lexicographic order."""
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


class BasisSet:
    """Tensor-product basis over a list of multi-indices.

    Parameters
    ----------
    univariates : list of UnivariateBasis
        One per input.
    multi_indices : array of int, shape (L, D)
        First row must be all zeros.
    """

    def __init__(self, univariates, multi_indices):
        self.univariates = list(univariates)
        idx = np.asarray(multi_indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != len(self.univariates):
            raise InputError("multi_indices must have shape (L, D)")
        if idx.shape[0] == 0 or np.any(idx[0] != 0):
            raise InputError("the first multi-index must be all zeros")
        if np.any(idx < 0):
            raise InputError("multi-indices must be nonnegative")
        if np.unique(idx, axis=0).shape[0] != idx.shape[0]:
            raise InputError("duplicate multi-indices")
        caps = np.array([u.degree for u in self.univariates])
        if np.any(idx > caps):
            raise InputError("a multi-index exceeds its univariate basis degree")
        self.multi_indices = idx
        self.multi_indices.setflags(write=False)
        nnz = np.count_nonzero(idx, axis=1)
        width = max(int(nnz.max()), 1)
        self._var = np.zeros((idx.shape[0], width), dtype=np.int64)
        self._deg = np.zeros((idx.shape[0], width), dtype=np.int64)
        for r in range(idx.shape[0]):
            (nz,) = np.nonzero(idx[r])
            self._var[r, : nz.size] = nz
            self._deg[r, : nz.size] = idx[r, nz]

    @classmethod
    def total_degree(cls, univariates, p):
        """Total-degree set, dropping indices beyond any reduced univariate degree."""
        univariates = list(univariates)
        idx = total_degree_indices(len(univariates), p)
        caps = np.array([u.degree for u in univariates])
        keep = np.all(idx <= caps, axis=1)
        return cls(univariates, idx[keep])

    @property
    def dim(self):
        return len(self.univariates)

    @property
    def size(self):
        return self.multi_indices.shape[0]

    @property
    def max_degree(self):
        return int(self.multi_indices.sum(axis=1).max())

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return BasisSet(self.univariates, self.multi_indices[rows])

    def evaluate(self, X, columns=None, n_jobs=1):
        """Design matrix ``Psi[i, l] = prod_j phi^j_{k_lj}(X[i, j])``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InputError(f"points have dimension {X.shape[-1] if X.ndim else 0}, basis {self.dim}")
        cols = np.arange(self.size) if columns is None else np.asarray(columns, dtype=np.int64)
        var, deg = self._var[cols], self._deg[cols]
        used = np.unique(var[deg > 0]) if np.any(deg > 0) else np.array([], dtype=np.int64)
        pmax = max(int(deg.max()) if deg.size else 0, 0)

        def block(_, rows):
            pts = X[rows]
            # phi[i, j, k]; inputs that never appear keep only phi_0 == 1
            phi = np.ones((pts.shape[0], self.dim, pmax + 1))
            for j in used:
                u = self.univariates[j]
                top = min(u.degree, pmax)
                phi[:, j, : top + 1] = u.evaluate(pts[:, j], top)
            out = np.ones((pts.shape[0], cols.size))
            for s in range(var.shape[1]):
                out *= phi[:, var[:, s], deg[:, s]]
            return out

        chunk = max(256, 4_000_000 // max(cols.size, 1))
        return concat_rows(map_chunks(block, X.shape[0], n_jobs, chunk), (0, cols.size))


def evaluate_basis(basis, points, n_jobs=1):
    """Functional alias of :meth:`BasisSet.evaluate`."""
    return basis.evaluate(points, n_jobs=n_jobs)
