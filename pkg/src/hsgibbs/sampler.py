"""Systematic-scan Gibbs sampler for the hierarchical horseshoe posterior.

One Gibbs iteration updates, in order: ``x`` (Gaussian conditional),
``sigma^2_obs``, ``tau^2``, ``w^2``, the prior factor ``C`` (only when the
``pcgls`` strategy consumes it), ``gamma`` and ``xi``.  All hyperparameter
conditionals are inverse gamma; the Gaussian conditional is sampled either
exactly through a dense Cholesky factorization (``direct``) or by solving a
randomly perturbed least-squares problem with CGLS, optionally in standard
form (``pcgls``).
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy.linalg import lapack

from .exceptions import FactorizationError, InvalidDimensionError, InvalidParameterError
from .operators import DifferenceOperator, LinearOperator, MatrixOperator
from .prior import (
    POSITIVITY_FLOOR,
    HorseshoeParams,
    HyperState,
    PrecisionAssembler,
    precision_weights,
    prior_factor,
    sample_inv_gamma,
)

__all__ = [
    "STRATEGIES",
    "GibbsConfig",
    "GaussianConditional",
    "CglsResult",
    "ChainStore",
    "cgls",
    "sample_pi1_direct",
    "sample_pi1_cgls",
    "sample_pi1_pcgls",
    "noise_var_params",
    "global_var_params",
    "local_var_params",
    "gamma_params",
    "xi_params",
    "sample_pi2_noise_var",
    "sample_pi3_global_var",
    "sample_pi4_local_vars",
    "sample_pi5_gamma",
    "sample_pi6_xi",
    "run_gibbs",
]

log = logging.getLogger(__name__)

STRATEGIES = ("direct", "cgls", "pcgls")

# largest (m + k) * d for which CGLS stacks M as a dense array and runs the
# compiled solver
DENSE_STACK_MAX = 1 << 20


@dataclass(frozen=True)
class GibbsConfig:
    """Chain length, thinning and the strategy for the Gaussian conditional.

    ``n_max=None`` means ``m + d`` CGLS iterations.  ``storage="moments"``
    keeps only running mean and variance of ``x``, ``w^2`` and ``xi``.
    """

    n_s: int = 20000
    n_b: int = 2000
    n_t: int = 20
    strategy: str = "direct"
    eps_cgls: float = 1e-4
    n_max: Optional[int] = None
    seed: int = 0
    storage: str = "full"

    def __post_init__(self):
        if self.n_s < 1 or self.n_t < 1 or self.n_b < 0:
            raise InvalidParameterError("need n_s >= 1, n_t >= 1 and n_b >= 0")
        if self.strategy not in STRATEGIES:
            raise InvalidParameterError(f"unknown strategy {self.strategy!r}")
        if not (self.eps_cgls > 0 or (self.n_max or 0) >= 1):
            raise InvalidParameterError("need eps_cgls > 0 or n_max >= 1")
        if self.n_max is not None and self.n_max < 1:
            raise InvalidParameterError("n_max must be positive")
        if self.storage not in ("full", "moments"):
            raise InvalidParameterError(f"unknown storage mode {self.storage!r}")

    @property
    def n_total(self) -> int:
        return self.n_b + self.n_s * self.n_t

    def retained(self, it: int) -> bool:
        """Whether 1-based iteration ``it`` is stored."""
        return it > self.n_b and it % self.n_t == 0


# ---------------------------------------------------------------------------
# Gaussian conditional


@dataclass
class GaussianConditional:
    """``x | sigma^2, tau^2, w^2 ~ N(mu, P^{-1})`` with
    ``P = A^T A / sigma^2 + L^T W L`` and ``mu = P^{-1} A^T y / sigma^2``.

    ``gram`` (``A^T A``), ``Aty`` and ``assembler`` are optional caches for
    the direct sampler; ``factor`` is the triangular ``C`` used by pCGLS.
    """

    A: LinearOperator
    y: np.ndarray
    L: DifferenceOperator
    sigma2: float
    tau2: float
    w2: np.ndarray
    factor: Optional[object] = None
    gram: Optional[np.ndarray] = field(default=None, repr=False)
    Aty: Optional[np.ndarray] = field(default=None, repr=False)
    assembler: Optional[PrecisionAssembler] = field(default=None, repr=False)
    dense_stack: bool = False
    _L_dense: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    @property
    def W(self) -> np.ndarray:
        return precision_weights(self.tau2, self.w2)

    def structure_dense(self) -> np.ndarray:
        if self._L_dense is None:
            self._L_dense = self.L.L.matrix.toarray()
        return self._L_dense

    def precision(self) -> np.ndarray:
        """Dense posterior precision ``P``."""
        gram = self.gram if self.gram is not None else self.A.gram()
        P = gram / max(self.sigma2, POSITIVITY_FLOOR)
        asm = self.assembler or PrecisionAssembler(self.L.L.matrix)
        asm.add_to_dense(P, self.W)
        return P

    def mean(self) -> np.ndarray:
        Aty = self.Aty if self.Aty is not None else self.A.apply_adjoint(self.y)
        return np.linalg.solve(self.precision(), Aty / self.sigma2)

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision())


@dataclass
class CglsResult:
    x: np.ndarray
    iters: int
    converged: bool
    Ax: Optional[np.ndarray] = None


def sample_pi1_direct(cond: GaussianConditional, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from ``N(mu, P^{-1})`` by a Cholesky factorization.

    ``P`` is factored in the whitened variables ``xt = C x``:
    ``P = C^T K C`` with ``K = I + C^{-T} A^T A C^{-1} / sigma^2 = G G^T``,
    so ``C^T G`` is a Cholesky factor of ``P`` and
    ``x = C^{-1} G^{-T} (G^{-1} C^{-T} b + u)`` with ``b = A^T y / sigma^2``.
    Since ``K >= I`` this stays stable when the prior weights span many
    orders of magnitude, where factoring ``P`` itself breaks down.  ``C`` is
    taken from ``cond.factor`` or computed from the current weights.
    """
    C = cond.factor
    if C is None:
        C = prior_factor(cond.L, cond.tau2, cond.w2)
    sigma2 = max(cond.sigma2, POSITIVITY_FLOOR)
    gram = cond.gram if cond.gram is not None else cond.A.gram()
    Aty = cond.Aty if cond.Aty is not None else cond.A.apply_adjoint(cond.y)
    T = C.solve_T(gram)
    K = C.solve_T(np.ascontiguousarray(T.T)) / sigma2
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += 1.0
    G, info = lapack.dpotrf(K, lower=1, clean=0, overwrite_a=1)
    if info != 0:
        raise FactorizationError(f"posterior precision is not positive definite (info={info})")
    v, info = lapack.dtrtrs(G, C.solve_T(Aty) / sigma2, lower=1)
    if info != 0:
        raise FactorizationError("triangular solve failed")
    v += rng.standard_normal(v.size)
    xt, info = lapack.dtrtrs(G, v, lower=1, trans=1)
    if info != 0:
        raise FactorizationError("triangular solve failed")
    return C.solve(xt)


def cgls(apply_M: Callable, apply_MT: Callable, z: np.ndarray, eps: float, n_max: int,
         measure: Optional[Callable] = None) -> tuple:
    """CGLS for ``min ||M x - z||``.

    Stops when ``||M^T (z - M x_j)|| < eps ||M^T z||`` or after ``n_max``
    iterations; costs one ``M^T`` plus one ``M`` and one ``M^T`` per
    iteration.  ``measure`` maps the normal-equation residual to the vector
    whose norm is tested (identity by default); pCGLS uses it to test
    convergence on the untransformed normal equations.

    Returns ``(x, iters, converged, r)`` with the final residual
    ``r = z - M x``.
    """
    r = np.array(z, dtype=float)
    s = apply_MT(r)
    x = np.zeros_like(s)
    gamma = s @ s
    norm = (lambda v: np.linalg.norm(measure(v))) if measure else (lambda v: np.sqrt(v @ v))
    target = eps * norm(s)
    if gamma == 0.0:
        return x, 0, True, r
    p = s.copy()
    for it in range(1, n_max + 1):
        q = apply_M(p)
        alpha = gamma / (q @ q)
        x += alpha * p
        r -= alpha * q
        s = apply_MT(r)
        gamma_new = s @ s
        if norm(s) < target:
            return x, it, True, r
        p *= gamma_new / gamma
        p += s
        gamma = gamma_new
    return x, n_max, False, r


@njit(cache=True)
def _cgls_kernel(M, MT, z, eps, n_max, G):  # pragma: no cover - jitted
    use_g = G.shape[0] > 0
    r = z.copy()
    s = MT @ r
    x = np.zeros(s.size)
    gamma = s @ s
    target = eps * (np.linalg.norm(G @ s) if use_g else np.sqrt(gamma))
    if gamma == 0.0:
        return x, 0, True, r
    p = s.copy()
    for it in range(1, n_max + 1):
        q = M @ p
        alpha = gamma / (q @ q)
        x += alpha * p
        r -= alpha * q
        s = MT @ r
        gamma_new = s @ s
        res = np.linalg.norm(G @ s) if use_g else np.sqrt(gamma_new)
        if res < target:
            return x, it, True, r
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, n_max, False, r


_NO_MEASURE = np.zeros((0, 0))


def _cgls_dense(M, z, eps, n_max, G=_NO_MEASURE):
    """Compiled :func:`cgls` for an explicit ``M``; ``G`` (possibly 0 x 0)
    plays the role of ``measure``."""
    M = np.ascontiguousarray(M)
    return _cgls_kernel(M, np.ascontiguousarray(M.T), z, float(eps), int(n_max), G)


def _dense_eligible(cond) -> bool:
    A = cond.A
    return (cond.dense_stack and isinstance(A, MatrixOperator) and not A.is_sparse)


def _perturbed_rhs(cond, rng, n_bottom):
    sigma = np.sqrt(max(cond.sigma2, POSITIVITY_FLOOR))
    z = rng.standard_normal(cond.A.nrows + n_bottom)
    z[: cond.A.nrows] += cond.y / sigma
    return sigma, z


def sample_pi1_cgls(cond: GaussianConditional, rng: np.random.Generator,
                    eps: float, n_max: int) -> CglsResult:
    """Draw by solving ``min || [A/sigma; W^{1/2} L] x - z ||`` with
    ``z = [y/sigma; 0] + u``, ``u ~ N(0, I)``.

    The prior block uses the square root ``W^{1/2} L`` (k rows), so ``u``
    has ``m + k`` entries.  ``Ax`` is recovered from the CGLS residual.
    When ``cond.dense_stack`` is set and ``A`` is a dense matrix, ``M`` is
    stacked explicitly and a compiled solver runs the same iteration.
    """
    A, L = cond.A, cond.L
    m = A.nrows
    sqrt_w = np.sqrt(cond.W)
    sigma, z = _perturbed_rhs(cond, rng, L.k)

    if _dense_eligible(cond):
        M = np.vstack([A.matrix / sigma, sqrt_w[:, None] * cond.structure_dense()])
        x, iters, ok, r = _cgls_dense(M, z, eps, n_max, _NO_MEASURE)
    else:
        def apply_M(x):
            return np.concatenate([A.apply(x) / sigma, sqrt_w * L.apply(x)])

        def apply_MT(r):
            return A.apply_adjoint(r[:m]) / sigma + L.apply_adjoint(sqrt_w * r[m:])

        x, iters, ok, r = cgls(apply_M, apply_MT, z, eps, n_max)
    return CglsResult(x, iters, bool(ok), sigma * (z[:m] - r[:m]))


def sample_pi1_pcgls(cond: GaussianConditional, rng: np.random.Generator,
                     eps: float, n_max: int) -> CglsResult:
    """Standard-form (priorconditioned) variant: solve for ``xt = C x`` in
    ``min || [A C^{-1}/sigma; I] xt - z ||`` and return ``x = C^{-1} xt``.

    The stopping test uses ``C^T s`` where ``s`` is the transformed
    normal-equation residual; this is the residual of the original normal
    equations, so ``eps`` means the same thing as for :func:`sample_pi1_cgls`.
    """
    C = cond.factor
    if C is None:
        raise InvalidParameterError("pcgls needs the prior factor C")
    A = cond.A
    m = A.nrows
    sigma, z = _perturbed_rhs(cond, rng, A.ncols)

    if _dense_eligible(cond):
        B = C.solve_T(A.matrix.T).T / sigma
        M = np.vstack([B, np.eye(A.ncols)])
        G = np.ascontiguousarray(C.toarray().T)
        xt, iters, ok, r = _cgls_dense(M, z, eps, n_max, G)
    else:
        def apply_M(xt):
            return np.concatenate([A.apply(C.solve(xt)) / sigma, xt])

        def apply_MT(r):
            return C.solve_T(A.apply_adjoint(r[:m])) / sigma + r[m:]

        xt, iters, ok, r = cgls(apply_M, apply_MT, z, eps, n_max, measure=C.rmatvec)
    return CglsResult(C.solve(xt), iters, bool(ok), sigma * (z[:m] - r[:m]))


# ---------------------------------------------------------------------------
# inverse-gamma conditionals: (shape, scale) and samplers


def noise_var_params(resid_sq: float, m: int, alpha_obs: float, beta_obs: float):
    return m / 2.0 + alpha_obs, 0.5 * resid_sq + 1.0 / beta_obs


def global_var_params(Lx: np.ndarray, w2: np.ndarray, gamma: float, nu: float):
    w2 = np.maximum(w2, POSITIVITY_FLOOR)
    return (Lx.size + nu) / 2.0, 0.5 * np.sum(Lx**2 / w2) + nu / max(gamma, POSITIVITY_FLOOR)


def local_var_params(Lx: np.ndarray, tau2: float, xi: np.ndarray, nu: float):
    tau2 = max(tau2, POSITIVITY_FLOOR)
    return (nu + 1) / 2.0, Lx**2 / (2.0 * tau2) + nu / np.maximum(xi, POSITIVITY_FLOOR)


def gamma_params(tau2: float, tau0_sq: float, nu: float):
    return (nu + 1) / 2.0, 1.0 / tau0_sq + nu / max(tau2, POSITIVITY_FLOOR)


def xi_params(w2: np.ndarray, nu: float):
    return (nu + 1) / 2.0, 1.0 + nu / np.maximum(w2, POSITIVITY_FLOOR)


def _ig(shape, scale, rng, size=None):
    return np.maximum(sample_inv_gamma(shape, scale, rng, size=size), POSITIVITY_FLOOR)


def sample_pi2_noise_var(x, A: LinearOperator, y, alpha_obs: float, beta_obs: float,
                         rng: np.random.Generator, Ax=None) -> float:
    """``sigma^2 ~ IG(m/2 + alpha, ||y - Ax||^2 / 2 + 1/beta)``."""
    if Ax is None:
        Ax = A.apply(x)
    r = y - Ax
    shape, scale = noise_var_params(r @ r, y.size, alpha_obs, beta_obs)
    return float(_ig(shape, scale, rng))


def sample_pi3_global_var(x, L: DifferenceOperator, w2, gamma: float, nu: float,
                          rng: np.random.Generator, Lx=None) -> float:
    """``tau^2 ~ IG((k + nu)/2, sum([Lx]_i^2 / w_i^2)/2 + nu/gamma)``."""
    if Lx is None:
        Lx = L.apply(x)
    shape, scale = global_var_params(Lx, w2, gamma, nu)
    return float(_ig(shape, scale, rng))


def sample_pi4_local_vars(x, L: DifferenceOperator, tau2: float, xi, nu: float,
                          rng: np.random.Generator, Lx=None) -> np.ndarray:
    """Componentwise ``w_i^2 ~ IG((nu + 1)/2, [Lx]_i^2/(2 tau^2) + nu/xi_i)``."""
    if Lx is None:
        Lx = L.apply(x)
    shape, scale = local_var_params(Lx, tau2, xi, nu)
    return _ig(shape, scale, rng, size=scale.shape)


def sample_pi5_gamma(tau2: float, tau0_sq: float, nu: float,
                     rng: np.random.Generator) -> float:
    """``gamma ~ IG((nu + 1)/2, 1/tau0^2 + nu/tau^2)``."""
    shape, scale = gamma_params(tau2, tau0_sq, nu)
    return float(_ig(shape, scale, rng))


def sample_pi6_xi(w2, nu: float, rng: np.random.Generator) -> np.ndarray:
    """Componentwise ``xi_i ~ IG((nu + 1)/2, 1 + nu/w_i^2)``."""
    shape, scale = xi_params(np.asarray(w2, dtype=float), nu)
    return _ig(shape, scale, rng, size=scale.shape)


# ---------------------------------------------------------------------------
# chain storage


class _RunningMoments:
    """Welford accumulator over rows."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, v):
        self.n += 1
        delta = v - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (v - self.mean)

    @property
    def var(self):
        return self.m2 / max(self.n - 1, 1)


@dataclass
class ChainStore:
    """Thinned post-burn-in samples.

    In ``"moments"`` storage ``x``, ``w2`` and ``xi`` are ``None`` and
    ``moments`` holds ``{name: (mean, var)}`` instead.
    """

    sigma2: np.ndarray
    tau2: np.ndarray
    gamma: np.ndarray
    cgls_iters: np.ndarray
    cgls_trace: np.ndarray
    iterations: np.ndarray
    x: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    moments: dict = field(default_factory=dict)
    n_nonconverged: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def n_s(self) -> int:
        return self.sigma2.size

    def x_mean(self) -> np.ndarray:
        return self.x.mean(axis=0) if self.x is not None else self.moments["x"][0]

    def x_std(self) -> np.ndarray:
        if self.x is not None:
            return self.x.std(axis=0, ddof=1)
        return np.sqrt(self.moments["x"][1])

    def w_mean(self) -> np.ndarray:
        """Posterior mean of the local scales ``w`` (not ``w^2``)."""
        if self.w2 is not None:
            return np.sqrt(self.w2).mean(axis=0)
        return self.moments["w"][0]


def _operator_descriptor(A: LinearOperator) -> dict:
    desc = {"type": type(A).__name__, "shape": list(A.shape)}
    for attr in ("d", "s", "normalize", "N", "p", "q", "source_dist", "detector_dist",
                 "detector_width"):
        if hasattr(A, attr):
            val = getattr(A, attr)
            desc[attr] = val.item() if hasattr(val, "item") else val
    return desc


def _state_dump(it: int, state: HyperState) -> dict:
    w2 = np.asarray(state.w2)
    return {"iteration": it, "sigma2": state.sigma2, "tau2": state.tau2,
            "gamma": state.gamma, "w2_min": float(w2.min()), "w2_max": float(w2.max())}


def run_gibbs(A: LinearOperator, y: np.ndarray, L: DifferenceOperator,
              params: HorseshoeParams, cfg: GibbsConfig,
              progress: Optional[Callable[[int, HyperState], None]] = None) -> ChainStore:
    """Run the Gibbs sampler and return the retained samples.

    Initial state: ``x = 0`` and unit ``sigma^2, tau^2, w^2, gamma, xi``.
    Each conditional draws from its own sub-stream of ``cfg.seed`` so the
    hyperparameter streams do not depend on the strategy for ``x``.
    """
    y = np.asarray(y, dtype=float)
    m, d = A.shape
    if y.shape != (m,):
        raise InvalidDimensionError(f"data has shape {y.shape}, operator expects ({m},)")
    if L.d != d:
        raise InvalidDimensionError(f"structure matrix acts on {L.d} unknowns, A on {d}")
    k = L.k
    nu = params.nu
    n_max = cfg.n_max if cfg.n_max is not None else m + d
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    rng_x, rng_s, rng_t, rng_w, rng_g, rng_xi = rngs

    state = HyperState.initial(k)
    x = np.zeros(d)
    cond = GaussianConditional(A=A, y=y, L=L, sigma2=state.sigma2, tau2=state.tau2,
                               w2=state.w2)
    if cfg.strategy == "direct":
        cond.gram = np.ascontiguousarray(A.gram())
        cond.Aty = A.apply_adjoint(y)

    uses_factor = cfg.strategy in ("direct", "pcgls")
    if uses_factor:
        cond.factor = prior_factor(L, state.tau2, state.w2)
    cond.dense_stack = (m + max(k, d)) * d <= DENSE_STACK_MAX

    n = cfg.n_total
    full = cfg.storage == "full"
    out_sigma2 = np.empty(cfg.n_s)
    out_tau2 = np.empty(cfg.n_s)
    out_gamma = np.empty(cfg.n_s)
    out_iters = np.zeros(cfg.n_s, dtype=np.int64)
    out_it = np.empty(cfg.n_s, dtype=np.int64)
    trace = np.zeros(n, dtype=np.int64)
    if full:
        out_x = np.empty((cfg.n_s, d))
        out_w2 = np.empty((cfg.n_s, k))
        out_xi = np.empty((cfg.n_s, k))
    else:
        acc = {"x": _RunningMoments(d), "w": _RunningMoments(k),
               "w2": _RunningMoments(k), "xi": _RunningMoments(k)}
    nonconv = 0
    j = 0
    t0 = time.perf_counter()
    for it in range(1, n + 1):
        cond.sigma2, cond.tau2, cond.w2 = state.sigma2, state.tau2, state.w2
        Ax = None
        try:
            if cfg.strategy == "direct":
                x = sample_pi1_direct(cond, rng_x)
            else:
                sampler = sample_pi1_cgls if cfg.strategy == "cgls" else sample_pi1_pcgls
                res = sampler(cond, rng_x, cfg.eps_cgls, n_max)
                x, Ax = res.x, res.Ax
                trace[it - 1] = res.iters
                nonconv += not res.converged
        except FactorizationError as exc:
            exc.gibbs_state = _state_dump(it, state)
            raise

        state.sigma2 = sample_pi2_noise_var(x, A, y, params.alpha_obs, params.beta_obs,
                                            rng_s, Ax=Ax)
        Lx = L.apply(x)
        state.tau2 = sample_pi3_global_var(x, L, state.w2, state.gamma, nu, rng_t, Lx=Lx)
        state.w2 = sample_pi4_local_vars(x, L, state.tau2, state.xi, nu, rng_w, Lx=Lx)
        if uses_factor:
            cond.factor = prior_factor(L, state.tau2, state.w2)
        state.gamma = sample_pi5_gamma(state.tau2, params.tau0_sq(state.sigma2), nu, rng_g)
        state.xi = sample_pi6_xi(state.w2, nu, rng_xi)

        if cfg.retained(it):
            out_sigma2[j] = state.sigma2
            out_tau2[j] = state.tau2
            out_gamma[j] = state.gamma
            out_iters[j] = trace[it - 1]
            out_it[j] = it
            if full:
                out_x[j] = x
                out_w2[j] = state.w2
                out_xi[j] = state.xi
            else:
                acc["x"].push(x)
                acc["w"].push(np.sqrt(state.w2))
                acc["w2"].push(state.w2)
                acc["xi"].push(state.xi)
            j += 1
        if progress is not None:
            progress(it, state)
        if it % max(n // 10, 1) == 0:
            log.info("gibbs %d/%d  sigma=%.4g tau=%.4g  (%.1fs)", it, n,
                     np.sqrt(state.sigma2), np.sqrt(state.tau2), time.perf_counter() - t0)

    meta = {
        "config": asdict(cfg),
        "params": asdict(params),
        "operator": _operator_descriptor(A),
        "m": m, "d": d, "k": k, "ndim": L.ndim,
        "n_max_effective": n_max,
    }
    store = ChainStore(sigma2=out_sigma2, tau2=out_tau2, gamma=out_gamma,
                       cgls_iters=out_iters, cgls_trace=trace, iterations=out_it,
                       n_nonconverged=nonconv, metadata=meta)
    if full:
        store.x, store.w2, store.xi = out_x, out_w2, out_xi
    else:
        store.moments = {name: (a.mean, a.var) for name, a in acc.items()}
    return store
