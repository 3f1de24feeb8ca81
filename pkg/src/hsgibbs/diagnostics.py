"""Post-processing of Gibbs chains: moments, quantiles, autocorrelation,
integrated autocorrelation time and effective sample size."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InvalidDimensionError

__all__ = [
    "MIN_CHAIN_LENGTH",
    "DegenerateChainWarning",
    "autocorrelation",
    "integrated_autocorrelation_time",
    "effective_sample_size",
    "componentwise_ess",
    "relerr",
    "mad",
    "ParameterSummary",
    "ChainSummary",
    "summarize_samples",
    "summarize",
]

MIN_CHAIN_LENGTH = 10


class DegenerateChainWarning(RuntimeWarning):
    """The chain has zero sample variance, so its autocorrelation is undefined."""


def _acf_columns(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Biased autocorrelation of every column of ``X`` (n x p) via FFT.

    Returns ``(rho, degenerate)`` where ``rho`` has shape (n, p) and
    ``degenerate`` marks constant columns, for which ``rho = [1, 0, ...]``.
    """
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(Xc, n=nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[:n]
    c0 = acov[0]
    # relative threshold: FFT round-off leaves ~1e-16 * scale^2 behind
    scale = np.maximum(np.abs(X).max(axis=0), np.finfo(float).tiny)
    degenerate = c0 <= (1e-13 * scale) ** 2 * n
    rho = np.zeros_like(acov)
    ok = ~degenerate
    rho[:, ok] = acov[:, ok] / c0[ok]
    rho[0, :] = 1.0
    return rho, degenerate


def _as_chain(chain) -> np.ndarray:
    x = np.asarray(chain, dtype=float)
    if x.ndim != 1:
        raise InvalidDimensionError(f"expected a 1D chain, got shape {x.shape}")
    if x.size < MIN_CHAIN_LENGTH:
        raise InvalidDimensionError(
            f"chain must have at least {MIN_CHAIN_LENGTH} samples, got {x.size}")
    return x


def autocorrelation(chain, max_lag: Optional[int] = None) -> np.ndarray:
    """Biased sample autocorrelation ``rho[j]``, ``j = 0..max_lag``.

    ``rho[j] = sum_t (x_t - m)(x_{t+j} - m) / sum_t (x_t - m)^2`` so that
    ``rho[0] = 1``.  A constant chain yields ``[1, 0, ...]`` and emits a
    :class:`DegenerateChainWarning`.
    """
    x = _as_chain(chain)
    rho, degenerate = _acf_columns(x[:, None])
    if degenerate[0]:
        warnings.warn("constant chain: autocorrelation is degenerate",
                      DegenerateChainWarning, stacklevel=2)
    max_lag = x.size - 1 if max_lag is None else min(max_lag, x.size - 1)
    return rho[: max_lag + 1, 0]


def _iact_from_rho(rho: np.ndarray) -> np.ndarray:
    """``1 + 2 sum_{j>=1} rho_j`` over lags before the first negative value,
    for each column of ``rho``."""
    neg = rho[1:] < 0
    first_neg = np.where(neg.any(axis=0), neg.argmax(axis=0), rho.shape[0] - 1)
    lags = np.arange(1, rho.shape[0])[:, None]
    keep = lags <= first_neg[None, :]
    return 1.0 + 2.0 * np.sum(np.where(keep, rho[1:], 0.0), axis=0)


def integrated_autocorrelation_time(chain) -> float:
    """IACT with the lag sum truncated at the first negative autocorrelation."""
    x = _as_chain(chain)
    rho, degenerate = _acf_columns(x[:, None])
    if degenerate[0]:
        warnings.warn("constant chain: IACT set to 1", DegenerateChainWarning, stacklevel=2)
        return 1.0
    return float(_iact_from_rho(rho)[0])


def effective_sample_size(chain) -> tuple[float, int]:
    """Return ``(tau_int, n_eff)`` with ``n_eff = ceil(n_s / tau_int)``."""
    x = _as_chain(chain)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        tau = integrated_autocorrelation_time(x)
    if tau == 1.0 and np.ptp(x) == 0:
        warnings.warn("constant chain: n_eff set to n_s", DegenerateChainWarning, stacklevel=2)
    return tau, int(math.ceil(x.size / tau))


def componentwise_ess(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """IACT and ``n_eff`` for each column of an ``n_s x p`` sample matrix.
    Constant columns get ``tau_int = 1``."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < MIN_CHAIN_LENGTH:
        raise InvalidDimensionError(
            f"expected an (n_s >= {MIN_CHAIN_LENGTH}) x p matrix, got shape {X.shape}")
    rho, degenerate = _acf_columns(X)
    tau = _iact_from_rho(rho)
    tau[degenerate] = 1.0
    return tau, np.ceil(X.shape[0] / tau).astype(np.int64)


def relerr(estimate, x_true) -> float:
    """``||estimate - x_true|| / ||x_true||`` (Euclidean)."""
    est = np.asarray(estimate, dtype=float).ravel()
    ref = np.asarray(x_true, dtype=float).ravel()
    if est.shape != ref.shape:
        raise InvalidDimensionError(f"shape mismatch: {est.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise InvalidDimensionError("reference vector is zero")
    return float(np.linalg.norm(est - ref) / denom)


def mad(samples, axis: int = 0):
    """Median absolute deviation about the median, without the normal
    consistency factor."""
    X = np.asarray(samples, dtype=float)
    med = np.median(X, axis=axis, keepdims=True)
    return np.median(np.abs(X - med), axis=axis)


@dataclass
class ParameterSummary:
    """Componentwise statistics of one parameter.

    Quantiles use linear interpolation between order statistics (numpy's
    default, "type 7").  ``iact`` and ``n_eff`` are arrays for vector
    parameters and floats for scalars.  Fields that cannot be computed from
    running moments alone are NaN.
    """

    name: str
    n_s: int
    mean: np.ndarray
    median: np.ndarray
    std: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    mad: np.ndarray
    iact: object = None
    n_eff: object = None

    @property
    def is_scalar(self) -> bool:
        return np.ndim(self.mean) == 0

    def as_dict(self) -> dict:
        def conv(v):
            if v is None:
                return None
            a = np.asarray(v)
            return a.item() if a.ndim == 0 else a.tolist()

        return {k: conv(getattr(self, k)) for k in
                ("mean", "median", "std", "ci_lower", "ci_upper", "mad", "iact", "n_eff")} | {
            "n_s": self.n_s}


@dataclass
class ChainSummary:
    n_s: int
    params: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> ParameterSummary:
        return self.params[name]

    def scalars(self) -> dict:
        return {k: v for k, v in self.params.items() if v.is_scalar}

    def vectors(self) -> dict:
        return {k: v for k, v in self.params.items() if not v.is_scalar}


def summarize_samples(samples, name: str = "param", ess: bool = True) -> ParameterSummary:
    """Statistics of an ``n_s`` chain (scalar) or ``n_s x p`` sample matrix."""
    X = np.asarray(samples, dtype=float)
    if X.size == 0 or X.shape[0] == 0:
        raise InvalidDimensionError(f"no samples for {name!r}")
    scalar = X.ndim == 1
    X2 = X[:, None] if scalar else X
    lo, med, hi = np.quantile(X2, [0.025, 0.5, 0.975], axis=0)
    std = X2.std(axis=0, ddof=1) if X2.shape[0] > 1 else np.zeros(X2.shape[1])
    tau = n_eff = None
    if ess and X2.shape[0] >= MIN_CHAIN_LENGTH:
        tau, n_eff = componentwise_ess(X2)
    out = [X2.mean(axis=0), med, std, lo, hi, mad(X2)]
    if scalar:
        out = [float(v[0]) for v in out]
        if tau is not None:
            tau, n_eff = float(tau[0]), int(n_eff[0])
    return ParameterSummary(name, X2.shape[0], *out, iact=tau, n_eff=n_eff)


def _moments_summary(name: str, n_s: int, mean, var) -> ParameterSummary:
    nan = np.full_like(np.asarray(mean, dtype=float), np.nan)
    return ParameterSummary(name, n_s, np.asarray(mean), nan, np.sqrt(var),
                            nan, nan.copy(), nan.copy())


def summarize(store, vector_ess: bool = True) -> ChainSummary:
    """Summaries of all parameters in a :class:`~hsgibbs.sampler.ChainStore`.

    Scalars: ``sigma_obs``, ``tau`` (standard deviations), ``sigma2``,
    ``tau2``, ``gamma``.  Vectors: ``x``, ``w`` (local scales), ``w2``,
    ``xi``.
    """
    n = store.n_s
    if n == 0:
        raise InvalidDimensionError("empty chain store")
    out = ChainSummary(n_s=n)
    scalars = {
        "sigma_obs": np.sqrt(store.sigma2),
        "tau": np.sqrt(store.tau2),
        "sigma2": store.sigma2,
        "tau2": store.tau2,
        "gamma": store.gamma,
    }
    for name, chain in scalars.items():
        out.params[name] = summarize_samples(chain, name)
    if store.x is not None:
        vectors = {"x": store.x, "w": np.sqrt(store.w2), "w2": store.w2, "xi": store.xi}
        for name, S in vectors.items():
            out.params[name] = summarize_samples(S, name, ess=vector_ess)
    else:
        for name in ("x", "w", "w2", "xi"):
            if name in store.moments:
                mean, var = store.moments[name]
                out.params[name] = _moments_summary(name, n, mean, var)
    return out
