import numpy as np
import pytest
import scipy.stats as stats
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hsgibbs.exceptions import InvalidDimensionError, InvalidParameterError
from hsgibbs.operators import build_difference
from hsgibbs.prior import (
    HorseshoeParams,
    HyperState,
    PrecisionAssembler,
    assemble_precision,
    cholesky_factor_1d,
    cholesky_factor_2d,
    half_cauchy_logpdf,
    half_t_pdf,
    horseshoe_density_bounds,
    inv_gamma_logpdf,
    precision_weights,
    prior_factor,
    sample_inv_gamma,
    sample_scale_mixture,
    shrinkage_coefficient,
    tau0_from_sparsity,
)


def _dense_precision(L, tau2, w2):
    Lm = L.L.matrix.toarray()
    return Lm.T @ np.diag(1.0 / (tau2 * w2)) @ Lm


def _random_weights(rng, k, spread=2.0):
    return np.exp(rng.normal(0.0, spread, k))


# ---------------------------------------------------------------------------
# parameters and state


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        HorseshoeParams(nu=0.5)
    with pytest.raises(InvalidParameterError):
        HorseshoeParams(tau0_mode="other")
    with pytest.raises(InvalidParameterError):
        HorseshoeParams(tau0_mode="fixed", tau0=0.0)
    with pytest.raises(InvalidParameterError):
        HorseshoeParams(beta_obs=-1.0)


def test_tau0_modes():
    assert HorseshoeParams().tau0_sq(0.04) == 0.04
    assert HorseshoeParams(tau0_mode="fixed", tau0=3.0).tau0_sq(0.04) == 9.0


def test_initial_state():
    s = HyperState.initial(5)
    assert s.sigma2 == s.tau2 == s.gamma == 1.0
    assert s.is_positive() and s.w2.shape == (5,)


def test_tau0_from_sparsity():
    assert tau0_from_sparsity(4, 104, 0.5) == pytest.approx(0.02)
    with pytest.raises(InvalidParameterError):
        tau0_from_sparsity(0, 10, 1.0)


def test_precision_weights_clamp():
    W = precision_weights(0.0, np.array([1.0, 0.0]))
    assert np.all(np.isfinite(W))


# ---------------------------------------------------------------------------
# precision matrix and factors


@pytest.mark.parametrize("ndim,N", [(1, 7), (2, 4)])
def test_assembler_matches_dense(ndim, N):
    L = build_difference(ndim, N)
    rng = np.random.default_rng(0)
    W = _random_weights(rng, L.k)
    asm = PrecisionAssembler(L.L.matrix)
    expected = L.L.matrix.toarray().T @ np.diag(W) @ L.L.matrix.toarray()
    np.testing.assert_allclose(asm.sparse(W).toarray(), expected, rtol=1e-13)
    P = np.zeros((L.d, L.d))
    asm.add_to_dense(P, W)
    np.testing.assert_allclose(P, expected, rtol=1e-13)
    np.testing.assert_allclose(assemble_precision(L, 1.0, 1.0 / W).dense(), expected, rtol=1e-13)


@settings(max_examples=25, deadline=None)
@given(d=st.integers(2, 60), seed=st.integers(0, 2**31))
def test_bidiagonal_factor_identity_and_solves(d, seed):
    rng = np.random.default_rng(seed)
    L = build_difference(1, d)
    w2 = _random_weights(rng, d)
    tau2 = float(np.exp(rng.normal()))
    C = cholesky_factor_1d(L, tau2, w2)
    Cd = C.toarray()
    Lam = _dense_precision(L, tau2, w2)
    assert np.linalg.norm(Cd.T @ Cd - Lam) <= 1e-12 * np.linalg.norm(Lam)
    b = rng.standard_normal(d)
    np.testing.assert_allclose(Cd @ C.solve(b), b, rtol=1e-9, atol=1e-9 * np.abs(b).max())
    np.testing.assert_allclose(Cd.T @ C.solve_T(b), b, rtol=1e-9, atol=1e-9 * np.abs(b).max())
    np.testing.assert_allclose(C.matvec(b), Cd @ b, rtol=1e-12)
    np.testing.assert_allclose(C.rmatvec(b), Cd.T @ b, rtol=1e-12)
    B = rng.standard_normal((d, 3))
    np.testing.assert_allclose(C.solve(B)[:, 1], C.solve(B[:, 1]))


@pytest.mark.parametrize("method", ["givens", "dense"])
@pytest.mark.parametrize("N", [3, 6, 10])
def test_banded_factor_identity(method, N):
    L = build_difference(2, N)
    rng = np.random.default_rng(N)
    for _ in range(5):
        w2 = _random_weights(rng, L.k)
        C = cholesky_factor_2d(L, 0.7, w2, method=method)
        Cd = C.toarray()
        Lam = _dense_precision(L, 0.7, w2)
        assert np.allclose(Cd, np.triu(Cd))
        assert np.all(np.diag(Cd) > 0)
        assert np.linalg.norm(Cd.T @ Cd - Lam) <= 1e-10 * np.linalg.norm(Lam)


def test_givens_and_dense_qr_agree():
    L = build_difference(2, 7)
    w2 = _random_weights(np.random.default_rng(5), L.k)
    a = cholesky_factor_2d(L, 1.3, w2, method="givens").toarray()
    b = cholesky_factor_2d(L, 1.3, w2, method="dense").toarray()
    np.testing.assert_allclose(a, b, atol=1e-10 * np.abs(b).max())


def test_banded_factor_products_and_solves():
    L = build_difference(2, 8)
    rng = np.random.default_rng(2)
    C = prior_factor(L, 0.2, _random_weights(rng, L.k))
    Cd = C.toarray()
    b = rng.standard_normal(L.d)
    np.testing.assert_allclose(C.matvec(b), Cd @ b, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(C.rmatvec(b), Cd.T @ b, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(Cd @ C.solve(b), b, atol=1e-9)
    np.testing.assert_allclose(Cd.T @ C.solve_T(b), b, atol=1e-9)
    B = rng.standard_normal((L.d, 4))
    np.testing.assert_allclose(Cd.T @ C.solve_T(B), B, atol=1e-9)


def test_factor_survives_extreme_weights():
    # local variances spanning 30 orders of magnitude
    L = build_difference(2, 6)
    rng = np.random.default_rng(9)
    w2 = 10.0 ** rng.uniform(-15, 15, L.k)
    C = prior_factor(L, 1.0, w2)
    Cd = C.toarray()
    Lam = _dense_precision(L, 1.0, w2)
    assert np.linalg.norm(Cd.T @ Cd - Lam) <= 1e-10 * np.linalg.norm(Lam)


def test_factor_dimension_checks():
    with pytest.raises(InvalidDimensionError):
        cholesky_factor_1d(build_difference(2, 3), 1.0, np.ones(18))
    with pytest.raises(InvalidDimensionError):
        cholesky_factor_2d(build_difference(1, 3), 1.0, np.ones(3))
    with pytest.raises(InvalidDimensionError):
        prior_factor(build_difference(1, 3), 1.0, np.ones(4))
    with pytest.raises(InvalidParameterError):
        cholesky_factor_2d(build_difference(2, 3), 1.0, np.ones(18), method="other")


# ---------------------------------------------------------------------------
# densities


@pytest.mark.parametrize("scale", [0.1, 1.0, 7.0])
def test_half_cauchy_normalized(scale):
    total, _ = quad(lambda t: np.exp(half_cauchy_logpdf(t, scale)), 0, np.inf)
    assert total == pytest.approx(1.0, rel=1e-8)
    assert half_cauchy_logpdf(-1.0, scale) == -np.inf
    np.testing.assert_allclose(np.exp(half_cauchy_logpdf(np.array([0.3, 2.0]), scale)),
                               stats.halfcauchy(scale=scale).pdf([0.3, 2.0]))


def test_half_t_reduces_to_half_cauchy():
    x = np.linspace(0.01, 10, 50)
    np.testing.assert_allclose(half_t_pdf(x, 1.0, 2.0), stats.halfcauchy(scale=2.0).pdf(x))
    np.testing.assert_allclose(half_t_pdf(x, 5.0, 1.5), 2 * stats.t(5, scale=1.5).pdf(x))


def test_half_t_approaches_half_normal():
    x = np.linspace(0, 4, 30)
    np.testing.assert_allclose(half_t_pdf(x, 1e7, 1.0), stats.halfnorm.pdf(x), atol=1e-6)


def test_shrinkage_coefficient():
    assert shrinkage_coefficient(1.0) == 0.5
    with pytest.raises(InvalidParameterError):
        shrinkage_coefficient(0.0)


def test_shrinkage_coefficient_beta_law():
    # standard half-Cauchy local scales give kappa ~ Beta(1/2, 1/2)
    lam = np.abs(np.random.default_rng(0).standard_cauchy(20000))
    kappa = shrinkage_coefficient(lam)
    assert stats.kstest(kappa, stats.beta(0.5, 0.5).cdf).pvalue > 1e-3


def _horseshoe_density(x):
    f = lambda lam: stats.norm.pdf(x, scale=lam) * 2 / (np.pi * (1 + lam**2))
    return quad(f, 0, np.inf, limit=200)[0]


@pytest.mark.parametrize("x", [0.05, 0.3, 1.0, 2.5, 8.0])
def test_horseshoe_density_between_bounds(x):
    lo, hi = horseshoe_density_bounds(x)
    assert lo < _horseshoe_density(x) < hi


def test_horseshoe_bounds_reject_origin():
    with pytest.raises(InvalidParameterError):
        horseshoe_density_bounds(np.array([0.0, 1.0]))


# ---------------------------------------------------------------------------
# samplers


def test_inverse_gamma_sampler_and_logpdf():
    rng = np.random.default_rng(1)
    draws = sample_inv_gamma(3.0, 2.0, rng, size=20000)
    ref = stats.invgamma(3.0, scale=2.0)
    assert stats.kstest(draws, ref.cdf).pvalue > 1e-3
    x = np.array([0.2, 1.0, 5.0])
    np.testing.assert_allclose(inv_gamma_logpdf(x, 3.0, 2.0), ref.logpdf(x))


@pytest.mark.parametrize("nu,c", [(1.0, 1.0), (1.0, 0.3), (3.0, 2.0)])
def test_scale_mixture_matches_half_t(nu, c):
    a = sample_scale_mixture(nu, c, np.random.default_rng(4), size=20000)
    cdf = lambda t: 2 * stats.t(nu, scale=c).cdf(t) - 1
    assert stats.kstest(a, cdf).pvalue > 1e-3


def test_scale_mixture_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidParameterError):
        sample_scale_mixture(0.5, 1.0, rng)
    with pytest.raises(InvalidParameterError):
        sample_scale_mixture(1.0, 0.0, rng)
