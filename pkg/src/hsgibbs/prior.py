"""Horseshoe prior on increments: hyperpriors, scale mixture, precision factors.

The conditionally Gaussian prior on ``x`` has precision
``Lambda = L^T W L`` with ``W = diag(1 / (tau^2 w_i^2))``.  Its triangular
factor ``C`` (``C^T C = Lambda``) is ``W^{1/2} D`` in 1D and the ``R`` of a
thin QR factorization of ``W^{1/2} L`` in 2D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import blas, lapack
from scipy.special import gammaln

from .exceptions import FactorizationError, InvalidDimensionError, InvalidParameterError
from .operators import DifferenceOperator

__all__ = [
    "POSITIVITY_FLOOR",
    "HorseshoeParams",
    "HyperState",
    "PrecisionFactor",
    "PrecisionAssembler",
    "BidiagonalFactor",
    "BandedUpperFactor",
    "precision_weights",
    "assemble_precision",
    "cholesky_factor_1d",
    "cholesky_factor_2d",
    "prior_factor",
    "half_cauchy_logpdf",
    "half_t_pdf",
    "shrinkage_coefficient",
    "horseshoe_density_bounds",
    "sample_inv_gamma",
    "inv_gamma_logpdf",
    "sample_scale_mixture",
    "tau0_from_sparsity",
]

# Lower clamp applied to tau^2, w^2 and sigma^2 before they are inverted.
POSITIVITY_FLOOR = 1e-30


@dataclass(frozen=True)
class HorseshoeParams:
    """Fixed hyperparameters of the hierarchical model.

    ``tau0_mode="coupled"`` replaces ``tau0^2`` by the current noise
    variance at every Gibbs step; ``"fixed"`` uses ``tau0``.
    """

    nu: float = 1.0
    tau0_mode: str = "coupled"
    tau0: float = 1.0
    alpha_obs: float = 1.0
    beta_obs: float = 1e4

    def __post_init__(self):
        if self.nu < 1:
            raise InvalidParameterError(f"nu must be >= 1, got {self.nu}")
        if self.tau0_mode not in ("fixed", "coupled"):
            raise InvalidParameterError(f"unknown tau0 mode {self.tau0_mode!r}")
        if self.tau0_mode == "fixed" and not self.tau0 > 0:
            raise InvalidParameterError(f"tau0 must be positive, got {self.tau0}")
        if not (self.alpha_obs > 0 and self.beta_obs > 0):
            raise InvalidParameterError("alpha_obs and beta_obs must be positive")

    def tau0_sq(self, sigma2_obs: float) -> float:
        if self.tau0_mode == "coupled":
            return max(float(sigma2_obs), POSITIVITY_FLOOR)
        return self.tau0**2


@dataclass
class HyperState:
    """Current hyperparameter values of the Gibbs chain."""

    sigma2: float
    tau2: float
    w2: np.ndarray
    gamma: float
    xi: np.ndarray

    @classmethod
    def initial(cls, k: int) -> "HyperState":
        return cls(sigma2=1.0, tau2=1.0, w2=np.ones(k), gamma=1.0, xi=np.ones(k))

    def is_positive(self) -> bool:
        return (self.sigma2 > 0 and self.tau2 > 0 and self.gamma > 0
                and bool(np.all(self.w2 > 0)) and bool(np.all(self.xi > 0)))


def tau0_from_sparsity(d0: int, d: int, sigma_obs: float) -> float:
    """Scale ``tau0 = d0 / (d - d0) * sigma_obs`` for ``d0`` expected nonzeros."""
    if not 0 < d0 < d:
        raise InvalidParameterError(f"need 0 < d0 < d, got d0={d0}, d={d}")
    return d0 / (d - d0) * sigma_obs


# ---------------------------------------------------------------------------
# precision matrix and its factors


def precision_weights(tau2: float, w2: np.ndarray) -> np.ndarray:
    """Diagonal of ``W``: ``1 / (tau^2 w_i^2)`` with both factors clamped."""
    tau2 = max(float(tau2), POSITIVITY_FLOOR)
    w2 = np.maximum(np.asarray(w2, dtype=float), POSITIVITY_FLOOR)
    return 1.0 / (tau2 * w2)


class PrecisionAssembler:
    """Fast re-assembly of ``L^T diag(W) L`` for a fixed sparsity pattern.

    ``Lambda.data = G @ W`` where ``G`` maps the k weights onto the stored
    entries of the CSR pattern of ``L^T L``.
    """

    def __init__(self, L: sp.spmatrix):
        L = sp.csr_matrix(L)
        L.sort_indices()
        self.k, self.d = L.shape
        pattern = (abs(L).T @ abs(L)).tocsr()
        pattern.sort_indices()
        self.indptr = pattern.indptr
        self.indices = pattern.indices
        nnz = pattern.nnz
        pos = sp.csr_matrix((np.arange(1, nnz + 1, dtype=float), pattern.indices, pattern.indptr),
                            shape=pattern.shape)
        # pair every two nonzeros within each row of L
        starts, counts = L.indptr[:-1], np.diff(L.indptr)
        c, v = L.indices, L.data
        g_rows, g_cols, g_vals = [], [], []
        for a_off in range(int(counts.max(initial=0))):
            for b_off in range(int(counts.max(initial=0))):
                sel = np.nonzero(counts > max(a_off, b_off))[0]
                ia, ib = starts[sel] + a_off, starts[sel] + b_off
                p = np.asarray(pos[c[ia], c[ib]]).ravel().astype(int) - 1
                g_rows.append(p)
                g_cols.append(sel)
                g_vals.append(v[ia] * v[ib])
        self.G = sp.csr_matrix(
            (np.concatenate(g_vals), (np.concatenate(g_rows), np.concatenate(g_cols))),
            shape=(nnz, self.k),
        )
        row_ids = np.repeat(np.arange(self.d), np.diff(self.indptr))
        self.flat_positions = row_ids * self.d + self.indices

    def values(self, W: np.ndarray) -> np.ndarray:
        return self.G @ W

    def sparse(self, W: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((self.values(W), self.indices.copy(), self.indptr.copy()),
                             shape=(self.d, self.d))

    def add_to_dense(self, P: np.ndarray, W: np.ndarray) -> None:
        """In-place ``P += L^T diag(W) L`` for a C-contiguous square array."""
        P.ravel()[self.flat_positions] += self.values(W)


class BidiagonalFactor:
    """``C = diag(sqrt_w) D`` with ``D`` the 1D lower-bidiagonal difference.

    ``D^{-1}`` is a cumulative sum, so solves cost O(d).
    """

    def __init__(self, sqrt_w: np.ndarray):
        self.sqrt_w = np.asarray(sqrt_w, dtype=float)
        self.d = self.sqrt_w.size

    def matvec(self, x):
        dx = np.array(x, dtype=float)
        dx[1:] -= x[:-1]
        return self.sqrt_w * dx

    def rmatvec(self, v):
        u = self.sqrt_w * v
        out = u.copy()
        out[:-1] -= u[1:]
        return out

    def _col(self, b):
        b = np.asarray(b, dtype=float)
        return self.sqrt_w if b.ndim == 1 else self.sqrt_w[:, None]

    def solve(self, b):
        """``C^{-1} b``; ``b`` may be a vector or a matrix of columns."""
        return np.cumsum(b / self._col(b), axis=0)

    def solve_T(self, b):
        return np.cumsum(np.asarray(b, dtype=float)[::-1], axis=0)[::-1] / self._col(b)

    def toarray(self):
        D = np.eye(self.d) - np.eye(self.d, k=-1)
        return self.sqrt_w[:, None] * D


class BandedUpperFactor:
    """Upper-triangular banded ``R``; ``band[j, t] = R[j, j + t]``."""

    def __init__(self, band: np.ndarray):
        self.band = np.asarray(band, dtype=float)
        self.d, w = self.band.shape
        self.bw = w - 1
        # LAPACK upper band storage: ab[bw + i - j, j] = R[i, j]
        ab = np.zeros((w, self.d))
        for t in range(w):
            ab[self.bw - t, t:] = self.band[: self.d - t, t]
        self.ab = np.asfortranarray(ab)

    def toarray(self):
        R = np.zeros((self.d, self.d))
        for t in range(self.bw + 1):
            idx = np.arange(self.d - t)
            R[idx, idx + t] = self.band[: self.d - t, t]
        return R

    def matvec(self, x):
        return blas.dtbmv(self.bw, self.ab, np.asarray(x, dtype=float), lower=0)

    def rmatvec(self, v):
        return blas.dtbmv(self.bw, self.ab, np.asarray(v, dtype=float), lower=0, trans=1)

    def _tb(self, b, trans):
        b = np.asarray(b, dtype=float)
        rhs = b[:, None] if b.ndim == 1 else b
        x, info = lapack.dtbtrs(self.ab, rhs, uplo="U", trans=trans)
        if info != 0:
            raise FactorizationError(f"banded triangular solve failed (info={info})")
        return x[:, 0] if b.ndim == 1 else x

    def solve(self, b):
        return self._tb(b, "N")

    def solve_T(self, b):
        return self._tb(b, "T")


@dataclass
class PrecisionFactor:
    """Prior precision ``Lambda = L^T W L`` and, optionally, its factor ``C``."""

    Lambda: sp.csr_matrix
    W: np.ndarray
    C: Optional[object] = field(default=None, repr=False)

    def dense(self) -> np.ndarray:
        return self.Lambda.toarray()


def _check_weights(L: DifferenceOperator, w2) -> np.ndarray:
    w2 = np.asarray(w2, dtype=float)
    if w2.shape != (L.k,):
        raise InvalidDimensionError(f"expected {L.k} local variances, got shape {w2.shape}")
    return w2


def assemble_precision(L: DifferenceOperator, tau2: float, w2) -> PrecisionFactor:
    """``Lambda = L^T W L`` as a sparse matrix (no factor)."""
    w2 = _check_weights(L, w2)
    W = precision_weights(tau2, w2)
    Lm = L.L.matrix
    Lam = (Lm.T @ sp.diags(W) @ Lm).tocsr()
    return PrecisionFactor(Lambda=Lam, W=W)


def cholesky_factor_1d(L: DifferenceOperator, tau2: float, w2) -> BidiagonalFactor:
    """``C = W^{1/2} D``, lower bidiagonal with ``C^T C = D^T W D``."""
    if L.ndim != 1:
        raise InvalidDimensionError("cholesky_factor_1d needs a 1D difference operator")
    w2 = _check_weights(L, w2)
    return BidiagonalFactor(np.sqrt(precision_weights(tau2, w2)))


@numba.njit(cache=True)
def _givens_banded_r(indptr, indices, data, order, d, bw):  # pragma: no cover - jitted
    R = np.zeros((d, bw + 1))
    buf = np.zeros(bw + 1)
    tmp = np.zeros(bw + 1)
    for rr in range(order.size):
        row = order[rr]
        lo, hi = indptr[row], indptr[row + 1]
        if lo == hi:
            continue
        col = indices[lo]
        for p in range(lo, hi):
            if indices[p] < col:
                col = indices[p]
        buf[:] = 0.0
        for p in range(lo, hi):
            buf[indices[p] - col] += data[p]
        while col < d:
            b = buf[0]
            if b != 0.0:
                a = R[col, 0]
                if a == 0.0:
                    for t in range(bw + 1):
                        tmp[t] = R[col, t]
                        R[col, t] = buf[t]
                        buf[t] = tmp[t]
                else:
                    rho = math.hypot(a, b)
                    c = a / rho
                    s = b / rho
                    for t in range(bw + 1):
                        rt = R[col, t]
                        bt = buf[t]
                        R[col, t] = c * rt + s * bt
                        buf[t] = c * bt - s * rt
                    buf[0] = 0.0
            nonzero = False
            for t in range(bw):
                buf[t] = buf[t + 1]
                if buf[t] != 0.0:
                    nonzero = True
            buf[bw] = 0.0
            if not nonzero:
                break
            col += 1
    return R


def _bandwidth(B: sp.csr_matrix) -> int:
    coo = B.tocoo()
    if coo.nnz == 0:
        return 0
    # spread of columns inside each row
    lo = np.full(B.shape[0], np.iinfo(np.int64).max)
    hi = np.full(B.shape[0], -1)
    np.minimum.at(lo, coo.row, coo.col)
    np.maximum.at(hi, coo.row, coo.col)
    used = hi >= 0
    return int((hi[used] - lo[used]).max())


def cholesky_factor_2d(L: DifferenceOperator, tau2: float, w2,
                       method: str = "givens") -> BandedUpperFactor:
    """``R`` from the thin QR factorization of ``W^{1/2} L`` (``Q`` not formed).

    ``method="givens"`` rotates the rows of the sparse stacked matrix into a
    banded ``R`` one at a time (rows ordered by leading column), costing
    O(k N^2).  ``method="dense"`` runs LAPACK Householder QR on the dense
    matrix and is meant for small problems and cross-checks.
    """
    if L.ndim != 2:
        raise InvalidDimensionError("cholesky_factor_2d needs a 2D difference operator")
    w2 = _check_weights(L, w2)
    B = (sp.diags(np.sqrt(precision_weights(tau2, w2))) @ L.L.matrix).tocsr()
    B.sort_indices()
    d = B.shape[1]
    bw = _bandwidth(B)
    if method == "givens":
        first = np.array([B.indices[B.indptr[i]] if B.indptr[i + 1] > B.indptr[i] else d
                          for i in range(B.shape[0])])
        order = np.argsort(first, kind="stable")
        band = _givens_banded_r(B.indptr.astype(np.int64), B.indices.astype(np.int64),
                                B.data, order.astype(np.int64), d, bw)
    elif method == "dense":
        if d > 4096:
            raise InvalidDimensionError("dense QR fallback is limited to d <= 4096")
        R = scipy.linalg.qr(B.toarray(), mode="r", check_finite=False)[0][:d]
        band = np.zeros((d, bw + 1))
        for t in range(bw + 1):
            idx = np.arange(d - t)
            band[: d - t, t] = R[idx, idx + t]
    else:
        raise InvalidParameterError(f"unknown QR method {method!r}")
    diag = band[:, 0]
    if np.any(diag == 0.0) or not np.all(np.isfinite(band)):
        raise FactorizationError("W^{1/2} L is numerically rank deficient")
    band *= np.sign(diag)[:, None]
    return BandedUpperFactor(band)


def prior_factor(L: DifferenceOperator, tau2: float, w2, method: str = "givens"):
    """Triangular ``C`` with ``C^T C = L^T W L`` (bidiagonal in 1D, banded QR
    factor in 2D)."""
    if L.ndim == 1:
        return cholesky_factor_1d(L, tau2, w2)
    return cholesky_factor_2d(L, tau2, w2, method=method)


# ---------------------------------------------------------------------------
# densities and scalar distributions


def half_cauchy_logpdf(x, scale: float):
    """Normalized log-density of the half-Cauchy distribution on (0, inf)."""
    if not scale > 0:
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)
    out = np.where(x > 0, out, -np.inf)
    return out[()] if out.ndim == 0 else out


def half_t_pdf(x, nu: float, c: float):
    """Density of the half Student-t with ``nu`` dof and scale ``c``."""
    x = np.asarray(x, dtype=float)
    logk = (math.log(2.0) + gammaln((nu + 1) / 2) - gammaln(nu / 2)
            - 0.5 * math.log(math.pi * nu) - math.log(c))
    out = np.exp(logk - (nu + 1) / 2 * np.log1p(x**2 / (nu * c**2)))
    return np.where(x >= 0, out, 0.0)


def shrinkage_coefficient(sigma):
    """``kappa = 1 / (1 + sigma^2)``; 1 is full shrinkage, 0 none."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise InvalidParameterError("local scale must be positive")
    out = 1.0 / (1.0 + sigma**2)
    return out[()] if out.ndim == 0 else out


_HS_K = 1.0 / math.sqrt(2.0 * math.pi**3)


def horseshoe_density_bounds(x):
    """Lower and upper bounds on the standard (tau = 1) horseshoe density."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise InvalidParameterError("the horseshoe density has a pole at x = 0")
    lower = 0.5 * _HS_K * np.log1p(4.0 / x**2)
    upper = _HS_K * np.log1p(2.0 / x**2)
    if lower.ndim == 0:
        return lower[()], upper[()]
    return lower, upper


def sample_inv_gamma(shape, scale, rng: np.random.Generator, size=None):
    """Draw from IG(shape, scale) as ``scale / Gamma(shape, 1)``."""
    g = rng.gamma(shape, 1.0, size=size)
    return np.asarray(scale) / g


def inv_gamma_logpdf(x, shape: float, scale: float):
    x = np.asarray(x, dtype=float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1) * np.log(x) - scale / x


def sample_scale_mixture(nu: float, c: float, rng: np.random.Generator,
                         size=None, b=None):
    """Half-t(nu, 0, c) draws through the inverse-gamma scale mixture.

    ``b ~ IG(1/2, 1/c^2)`` then ``a^2 | b ~ IG(nu/2, nu/b)``; returns ``a``.
    Passing ``b`` skips the first stage.
    """
    if nu < 1:
        raise InvalidParameterError(f"nu must be >= 1, got {nu}")
    if not c > 0:
        raise InvalidParameterError(f"scale must be positive, got {c}")
    if b is None:
        b = sample_inv_gamma(0.5, 1.0 / c**2, rng, size=size)
    a2 = sample_inv_gamma(nu / 2.0, nu / np.asarray(b), rng, size=size)
    return np.sqrt(a2)
