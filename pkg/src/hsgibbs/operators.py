"""Forward models and finite-difference structure matrices.

Two-dimensional images are N-by-N arrays ``X[i, j]`` (``i`` the row,
``j`` the column) and are vectorized column-major everywhere in the
package, i.e. ``x = X.ravel(order="F")`` and pixel ``(i, j)`` sits at
index ``i + N * j``.  With this convention ``kron(I, D)`` differentiates
along axis 0 and ``kron(D, I)`` along axis 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import InvalidDimensionError, InvalidParameterError

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "CountingOperator",
    "DifferenceOperator",
    "ConvolutionModel1D",
    "SeparableBlurModel2D",
    "FanBeamProjector",
    "build_difference",
    "build_convolution_1d",
    "build_separable_blur",
    "build_fan_beam",
    "forward_data",
    "vec",
    "unvec",
    "EXPLICIT_MAX_DIM",
]

# Largest number of columns for which operators are materialized as dense
# matrices (direct factorization of the posterior precision).
EXPLICIT_MAX_DIM = 4096


def vec(X: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a 2D image."""
    return np.asarray(X).ravel(order="F")


def unvec(x: np.ndarray, N: int) -> np.ndarray:
    """Inverse of :func:`vec` for an N-by-N image."""
    return np.asarray(x).reshape((N, N), order="F")


class LinearOperator:
    """Abstract linear map ``x -> A x`` with its adjoint ``y -> A^T y``.

    Subclasses implement :meth:`apply` and :meth:`apply_adjoint`.
    :meth:`as_matrix` materializes the operator (dense or sparse).
    """

    def __init__(self, nrows: int, ncols: int):
        self._shape = (int(nrows), int(ncols))

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    @property
    def nrows(self) -> int:
        return self._shape[0]

    @property
    def ncols(self) -> int:
        return self._shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def as_matrix(self):
        if self.ncols > EXPLICIT_MAX_DIM:
            raise InvalidDimensionError(
                f"explicit mode is limited to {EXPLICIT_MAX_DIM} columns, got {self.ncols}"
            )
        eye = np.eye(self.ncols)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.ncols)])

    def gram(self) -> np.ndarray:
        """Dense ``A^T A``."""
        M = self.as_matrix()
        if sp.issparse(M):
            return np.asarray((M.T @ M).toarray())
        return M.T @ M

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape})"


class MatrixOperator(LinearOperator):
    """Operator backed by an explicit dense array or scipy sparse matrix."""

    def __init__(self, matrix):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
            self._matrix_T = matrix.T.tocsr()
        else:
            matrix = np.array(matrix, dtype=float)
            if matrix.ndim != 2:
                raise InvalidDimensionError("matrix must be two-dimensional")
            matrix.flags.writeable = False
            self._matrix_T = matrix.T
        self.matrix = matrix
        super().__init__(*matrix.shape)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def apply(self, x):
        return self.matrix @ x

    def apply_adjoint(self, y):
        return self._matrix_T @ y

    def as_matrix(self):
        return self.matrix


class CountingOperator(LinearOperator):
    """Wraps an operator and counts forward and adjoint applications."""

    def __init__(self, op: LinearOperator):
        super().__init__(*op.shape)
        self.op = op
        self.n_apply = 0
        self.n_adjoint = 0

    @property
    def calls(self) -> int:
        return self.n_apply + self.n_adjoint

    def reset(self) -> None:
        self.n_apply = 0
        self.n_adjoint = 0

    def apply(self, x):
        self.n_apply += 1
        return self.op.apply(x)

    def apply_adjoint(self, y):
        self.n_adjoint += 1
        return self.op.apply_adjoint(y)

    def as_matrix(self):
        return self.op.as_matrix()


# ---------------------------------------------------------------------------
# structure matrices


@dataclass(frozen=True)
class DifferenceOperator:
    """First-order difference structure matrix with a zero left/top boundary.

    ``ndim == 1``: ``L = D`` (N x N lower bidiagonal, +1 diagonal, -1
    subdiagonal).  ``ndim == 2``: ``L = [kron(I, D); kron(D, I)]`` with
    ``k = 2 N^2`` rows.
    """

    ndim: int
    N: int
    L: MatrixOperator = field(repr=False)

    @property
    def d(self) -> int:
        return self.L.ncols

    @property
    def k(self) -> int:
        return self.L.nrows

    def apply(self, x):
        # array differences; much cheaper than a sparse matvec at this size
        x = np.asarray(x, dtype=float)
        if self.ndim == 1:
            return _diff_fwd(x, 0)
        X = unvec(x, self.N)
        return np.concatenate([vec(_diff_fwd(X, 0)), vec(_diff_fwd(X, 1))])

    def apply_adjoint(self, v):
        v = np.asarray(v, dtype=float)
        if self.ndim == 1:
            return _diff_adj(v, 0)
        V1, V2 = self.split(v)
        return vec(_diff_adj(V1, 0) + _diff_adj(V2, 1))

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        """Reshape a length-k increment vector into per-direction N x N maps
        (2D) or return it unchanged (1D)."""
        v = np.asarray(v)
        if self.ndim == 1:
            return [v]
        d = self.d
        return [unvec(v[:d], self.N), unvec(v[d:], self.N)]


def _diff_fwd(X: np.ndarray, axis: int) -> np.ndarray:
    """``D`` along ``axis``: ``out[i] = X[i] - X[i-1]`` with ``X[-1] = 0``."""
    out = X.copy()
    if axis == 0:
        out[1:] -= X[:-1]
    else:
        out[:, 1:] -= X[:, :-1]
    return out


def _diff_adj(V: np.ndarray, axis: int) -> np.ndarray:
    """``D^T`` along ``axis``: ``out[i] = V[i] - V[i+1]`` with ``V[N] = 0``."""
    out = V.copy()
    if axis == 0:
        out[:-1] -= V[1:]
    else:
        out[:, :-1] -= V[:, 1:]
    return out


def _difference_1d(N: int) -> sp.csr_matrix:
    return sp.diags([np.ones(N), -np.ones(N - 1)], [0, -1], shape=(N, N), format="csr")


def build_difference(ndim: int, N: int) -> DifferenceOperator:
    """Build the 1D or 2D first-order difference structure matrix."""
    if ndim not in (1, 2):
        raise InvalidDimensionError(f"dimensionality must be 1 or 2, got {ndim}")
    if N < 2:
        raise InvalidDimensionError(f"grid size must be at least 2, got {N}")
    D = _difference_1d(N)
    if ndim == 1:
        L = D
    else:
        eye = sp.identity(N, format="csr")
        L = sp.vstack([sp.kron(eye, D), sp.kron(D, eye)], format="csr")
    return DifferenceOperator(ndim=ndim, N=N, L=MatrixOperator(L))


# ---------------------------------------------------------------------------
# forward models


class ConvolutionModel1D(MatrixOperator):
    """Discretized Gaussian convolution on [0, 1] (midpoint quadrature).

    ``A[i, j] = h * exp(-(t_i - u_j)^2 / (2 s^2))`` with ``h = 1/d`` and
    midpoints ``t_i = u_i = (i + 1/2)/d``.  With ``normalize=True`` the
    kernel is divided by its mass ``s * sqrt(2 pi)`` so that interior rows
    sum to one and the blur preserves signal amplitude.
    """

    def __init__(self, d: int, s: float, normalize: bool = False):
        if d < 2:
            raise InvalidDimensionError(f"d must be at least 2, got {d}")
        if not s > 0:
            raise InvalidParameterError(f"kernel width must be positive, got {s}")
        t = (np.arange(d) + 0.5) / d
        h = 1.0 / d
        A = h * np.exp(-((t[:, None] - t[None, :]) ** 2) / (2.0 * s**2))
        if normalize:
            A /= s * np.sqrt(2.0 * np.pi)
        super().__init__(A)
        self.d = d
        self.s = float(s)
        self.normalize = normalize
        self.grid = t

    @property
    def A(self) -> np.ndarray:
        return self.matrix


def build_convolution_1d(d: int, s: float, normalize: bool = False) -> ConvolutionModel1D:
    return ConvolutionModel1D(d, s, normalize=normalize)


class SeparableBlurModel2D(LinearOperator):
    """Separable blur ``X -> A_c X A_r^T``, i.e. ``kron(A_r, A_c) vec(X)``.

    Toeplitz factors follow the classic deblurring challenge setup:
    column generator ``c[:5] = [5, 4, 3, 2, 1]/15`` and row generator
    ``r[:10] = [5, 4.5, ..., 0.5]/15``; ``A_c = toeplitz(c)`` and
    ``A_r = toeplitz(c, r)``.
    """

    def __init__(self, N: int):
        if N < 10:
            raise InvalidDimensionError(f"separable blur needs N >= 10, got {N}")
        super().__init__(N * N, N * N)
        c = np.zeros(N)
        c[:5] = np.arange(5, 0, -1) / 15.0
        r = np.zeros(N)
        r[:10] = np.arange(5.0, 0.0, -0.5) / 15.0
        self.N = N
        self.Ac = scipy.linalg.toeplitz(c)
        self.Ar = scipy.linalg.toeplitz(c, r)
        for M in (self.Ac, self.Ar):
            M.flags.writeable = False

    def apply(self, x):
        X = unvec(x, self.N)
        return vec(self.Ac @ X @ self.Ar.T)

    def apply_adjoint(self, y):
        Y = unvec(y, self.N)
        return vec(self.Ac.T @ Y @ self.Ar)

    def as_matrix(self):
        return np.kron(self.Ar, self.Ac)


def build_separable_blur(N: int) -> SeparableBlurModel2D:
    return SeparableBlurModel2D(N)


class FanBeamProjector(MatrixOperator):
    """Fan-beam CT system matrix with a flat detector (ray-driven).

    The image occupies ``[-N/2, N/2]^2`` with unit pixels.  For projection
    angle ``theta`` the source sits at ``source_dist * (cos, sin)(theta)``
    and the detector centre at ``-detector_dist * (cos, sin)(theta)``; the
    ``p`` detector elements span a width of ``N`` (pitch ``N/p``).  Each row
    holds the exact intersection lengths of the source-to-element-centre
    ray with the pixel grid.  Rows are ordered angle-major:
    ``row = a * p + e`` for angle ``a`` and detector element ``e``.
    """

    def __init__(self, N: int, p: int, q: int,
                 source_dist: Optional[float] = None,
                 detector_dist: Optional[float] = None,
                 detector_width: Optional[float] = None):
        if min(N, p, q) < 1:
            raise InvalidDimensionError(f"N, p, q must be positive, got {(N, p, q)}")
        self.N, self.p, self.q = int(N), int(p), int(q)
        self.source_dist = 3.0 * N if source_dist is None else float(source_dist)
        self.detector_dist = float(N) if detector_dist is None else float(detector_dist)
        self.detector_width = float(N) if detector_width is None else float(detector_width)
        self.angles = 2.0 * np.pi * np.arange(q) / q
        sources, targets = self.ray_endpoints()
        rows, cols, vals = [], [], []
        for r, (s, t) in enumerate(zip(sources, targets)):
            idx, lengths = _trace_ray(s, t, self.N)
            rows.append(np.full(idx.size, r))
            cols.append(idx)
            vals.append(lengths)
        A = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(p * q, N * N),
        )
        super().__init__(A)

    def ray_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Source positions and detector-element centres, one row per ray."""
        pitch = self.detector_width / self.p
        u = (np.arange(self.p) - (self.p - 1) / 2.0) * pitch
        src, dst = [], []
        for theta in self.angles:
            e_r = np.array([np.cos(theta), np.sin(theta)])
            e_t = np.array([-np.sin(theta), np.cos(theta)])
            s = self.source_dist * e_r
            centre = -self.detector_dist * e_r
            src.append(np.tile(s, (self.p, 1)))
            dst.append(centre[None, :] + u[:, None] * e_t[None, :])
        return np.vstack(src), np.vstack(dst)

    def sinogram(self, y: np.ndarray) -> np.ndarray:
        """Reshape data to a (p, q) sinogram: detector element by angle."""
        return np.asarray(y).reshape((self.q, self.p)).T


def _trace_ray(src: np.ndarray, dst: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Siddon traversal of the segment src->dst through the N x N grid.

    Returns column-major pixel indices and intersection lengths.
    """
    half = N / 2.0
    delta = dst - src
    length = float(np.hypot(*delta))
    planes = np.arange(N + 1) - half
    alphas = [np.array([0.0, 1.0])]
    lo, hi = 0.0, 1.0
    for axis in (0, 1):
        if abs(delta[axis]) < 1e-14:
            if not (-half <= src[axis] <= half):
                return np.empty(0, dtype=int), np.empty(0)
            continue
        a = (planes - src[axis]) / delta[axis]
        lo = max(lo, min(a[0], a[-1]))
        hi = min(hi, max(a[0], a[-1]))
        alphas.append(a)
    if hi <= lo:
        return np.empty(0, dtype=int), np.empty(0)
    a = np.concatenate(alphas)
    a = np.unique(a[(a >= lo) & (a <= hi)])
    seg = np.diff(a) * length
    mid = 0.5 * (a[:-1] + a[1:])
    keep = seg > 1e-12 * max(length, 1.0)
    seg, mid = seg[keep], mid[keep]
    px = src[0] + mid * delta[0]
    py = src[1] + mid * delta[1]
    col = np.clip(np.floor(px + half).astype(int), 0, N - 1)
    row = np.clip(np.floor(half - py).astype(int), 0, N - 1)
    return row + N * col, seg


def build_fan_beam(N: int, p: int, q: int) -> FanBeamProjector:
    return FanBeamProjector(N, p, q)


def forward_data(A: LinearOperator, x_true: np.ndarray, noise_level: float,
                 rng) -> tuple[np.ndarray, float]:
    """Synthesize ``y = A x_true + e`` with ``e ~ N(0, sigma^2 I)``.

    The noise standard deviation is relative to the RMS of the clean data,
    ``sigma = noise_level * ||A x_true||_2 / sqrt(m)`` (so ``noise_level=0.02``
    is "2% noise").  ``rng`` only needs a ``standard_normal(size)`` method.

    Returns
    -------
    y : ndarray
        Noisy data.
    sigma : float
        The noise standard deviation that was used.
    """
    if not noise_level > 0:
        raise InvalidParameterError(f"noise level must be positive, got {noise_level}")
    b = A.apply(np.asarray(x_true, dtype=float))
    sigma = noise_level * np.linalg.norm(b) / np.sqrt(b.size)
    e = np.asarray(rng.standard_normal(b.size), dtype=float)
    return b + sigma * e, float(sigma)
