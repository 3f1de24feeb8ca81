"""End-to-end experiments: phantom and data generation, sampling, and
artifact export for the deconvolution, deblurring and CT test problems."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import artifacts
from .diagnostics import componentwise_ess, relerr, summarize
from .exceptions import ConfigError, InvalidParameterError
from .operators import (
    ConvolutionModel1D,
    DifferenceOperator,
    FanBeamProjector,
    LinearOperator,
    SeparableBlurModel2D,
    build_difference,
    forward_data,
    vec,
)
from .phantoms import Phantom, make_phantom
from .prior import HorseshoeParams
from .sampler import ChainStore, GibbsConfig, cgls, run_gibbs

__all__ = [
    "PROBLEMS",
    "DECONV_DATA_RMS",
    "ExperimentConfig",
    "Problem",
    "ExperimentResult",
    "default_config",
    "build_problem",
    "tikhonov_baseline",
    "discrepancy_lambda",
    "run_experiment",
]

log = logging.getLogger(__name__)

PROBLEMS = ("deconv1d", "deblur2d", "ct2d")

# RMS of the clean deconvolution data.  With 2% and 5% relative noise this
# gives noise standard deviations 7.867e-3 and 1.967e-2.
DECONV_DATA_RMS = 0.39335

_PHANTOM_OF = {"deconv1d": "piecewiseConstant1D", "deblur2d": "geometricShapes2D",
               "ct2d": "grains2D"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``N`` is ``d`` for the 1D problem and the image side otherwise.
    ``seed`` drives the data noise and (through ``gibbs.seed``) the chain;
    ``phantom_seed`` only matters for the grains phantom.
    """

    problem: str = "deconv1d"
    N: int = 128
    noise_level: float = 0.02
    kernel_width: float = 0.016
    p: Optional[int] = None
    q: int = 32
    seed: int = 0
    phantom_seed: int = 0
    params: HorseshoeParams = field(default_factory=HorseshoeParams)
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    out_dir: Optional[str] = None
    figures: bool = True
    baseline: bool = True

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if not 0 < self.noise_level < 1:
            raise ConfigError(f"noise level must be in (0, 1), got {self.noise_level}")
        min_n = {"deconv1d": 2, "deblur2d": 10, "ct2d": 8}[self.problem]
        if self.N < min_n:
            raise ConfigError(f"{self.problem} needs N >= {min_n}, got {self.N}")
        if self.problem == "ct2d" and (self.q < 1 or (self.p is not None and self.p < 1)):
            raise ConfigError("CT needs p, q >= 1")
        if not self.kernel_width > 0:
            raise ConfigError("kernel width must be positive")

    @property
    def ndim(self) -> int:
        return 1 if self.problem == "deconv1d" else 2


def default_config(problem: str, **overrides) -> ExperimentConfig:
    """Settings of the reference experiments; keyword overrides are applied
    to the config (``gibbs`` and ``params`` may be passed as dicts of field
    overrides)."""
    base = {
        "deconv1d": dict(N=128, noise_level=0.02,
                         gibbs=GibbsConfig(n_s=20000, n_b=2000, n_t=20)),
        "deblur2d": dict(N=32, noise_level=0.01,
                         gibbs=GibbsConfig(n_s=20000, n_b=4000, n_t=20)),
        "ct2d": dict(N=64, noise_level=0.01, q=32,
                     gibbs=GibbsConfig(n_s=20000, n_b=4000, n_t=20)),
    }
    if problem not in base:
        raise ConfigError(f"unknown problem {problem!r}; choose from {PROBLEMS}")
    kw = dict(problem=problem, **base[problem])
    for key in ("gibbs", "params"):
        if isinstance(overrides.get(key), dict):
            proto = kw.get(key, GibbsConfig() if key == "gibbs" else HorseshoeParams())
            overrides[key] = replace(proto, **overrides[key])
    kw.update(overrides)
    return ExperimentConfig(**kw)


@dataclass
class Problem:
    A: LinearOperator
    L: DifferenceOperator
    phantom: Phantom
    x_true: np.ndarray
    y: np.ndarray
    sigma_true: float
    image_shape: Optional[tuple] = None


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Forward operator, phantom and noisy data for ``cfg``."""
    N = cfg.N
    if cfg.problem == "deconv1d":
        A = ConvolutionModel1D(N, cfg.kernel_width, normalize=True)
        shape = make_phantom("piecewiseConstant1D", N).values
        rms = np.linalg.norm(A.apply(shape)) / np.sqrt(N)
        amplitude = float(min(1.0, DECONV_DATA_RMS / rms))
        phantom = make_phantom("piecewiseConstant1D", N, amplitude=amplitude)
        x_true = phantom.values
    else:
        if cfg.problem == "deblur2d":
            A = SeparableBlurModel2D(N)
            phantom = make_phantom("geometricShapes2D", N)
        else:
            A = FanBeamProjector(N, cfg.p if cfg.p is not None else N, cfg.q)
            phantom = make_phantom("grains2D", N, seed=cfg.phantom_seed)
        x_true = vec(phantom.values)
    L = build_difference(cfg.ndim, N)
    noise_rng = np.random.default_rng([cfg.seed, 0x5EED])
    y, sigma = forward_data(A, x_true, cfg.noise_level, noise_rng)
    return Problem(A, L, phantom, x_true, y, sigma,
                   None if cfg.ndim == 1 else (N, N))


def tikhonov_baseline(A: LinearOperator, y: np.ndarray, L: DifferenceOperator, lam: float,
                      eps: float = 1e-10, n_max: Optional[int] = None) -> np.ndarray:
    """Solve ``min ||A x - y||^2 + lam ||L x||^2`` with CGLS."""
    if lam < 0:
        raise InvalidParameterError("lambda must be nonnegative")
    m = A.nrows
    s = np.sqrt(lam)
    z = np.concatenate([np.asarray(y, dtype=float), np.zeros(L.k)])

    def apply_M(x):
        return np.concatenate([A.apply(x), s * L.apply(x)])

    def apply_MT(r):
        return A.apply_adjoint(r[:m]) + s * L.apply_adjoint(r[m:])

    n_max = n_max if n_max is not None else 4 * (m + A.ncols)
    x, *_ = cgls(apply_M, apply_MT, z, eps, n_max)
    return x


def discrepancy_lambda(A, y, L, sigma: float, safety: float = 1.0,
                       bounds=(1e-12, 1e4), n_bisect: int = 40) -> float:
    """Regularization parameter with ``||A x_lam - y|| = safety sqrt(m) sigma``,
    found by bisection in ``log(lam)`` (the residual grows with ``lam``)."""
    target = safety * np.sqrt(A.nrows) * sigma

    def resid(lam):
        return np.linalg.norm(A.apply(tikhonov_baseline(A, y, L, lam, eps=1e-8)) - y)

    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    if resid(np.exp(hi)) < target:
        return float(np.exp(hi))
    if resid(np.exp(lo)) > target:
        return float(np.exp(lo))
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if resid(np.exp(mid)) < target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: Problem
    chain: ChainStore
    summary: dict
    out_dir: Optional[Path] = None


def _as_image(v, shape):
    return np.asarray(v) if shape is None else np.asarray(v).reshape(shape, order="F")


def _w_map(w, L: DifferenceOperator):
    """1D: the vector; 2D: the two direction maps side by side (N x 2N)."""
    parts = L.split(w)
    return parts[0] if L.ndim == 1 else np.hstack(parts)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run the experiment described by ``cfg`` and (optionally) write its
    artifacts to ``cfg.out_dir``."""
    prob = build_problem(cfg)
    gibbs = replace(cfg.gibbs, seed=cfg.seed)
    log.info("%s: m=%d d=%d sigma_true=%.4g strategy=%s", cfg.problem, prob.A.nrows,
             prob.A.ncols, prob.sigma_true, gibbs.strategy)
    chain = run_gibbs(prob.A, prob.y, prob.L, cfg.params, gibbs)
    summ = summarize(chain, vector_ess=False)

    x_mean = chain.x_mean()
    x_std = chain.x_std()
    x_median = summ["x"].median
    report = {
        "problem": cfg.problem,
        # the output location is not part of the result, so identical runs
        # written to different directories give identical artifacts
        "config": {k: v for k, v in asdict(cfg).items() if k != "out_dir"},
        "m": prob.A.nrows,
        "d": prob.A.ncols,
        "k": prob.L.k,
        "sigma_obs_true": prob.sigma_true,
        "phantom": prob.phantom.descriptor,
        "relerr_mean": relerr(x_mean, prob.x_true),
        "relerr_median": (relerr(x_median, prob.x_true)
                          if np.all(np.isfinite(x_median)) else None),
        "scalars": {k: v.as_dict() for k, v in summ.scalars().items()},
        "cgls": {
            "mean_iters_after_burn_in": (float(chain.cgls_trace[gibbs.n_b:].mean())
                                         if gibbs.strategy != "direct" else 0.0),
            "n_nonconverged": chain.n_nonconverged,
        },
    }
    if chain.x is not None:
        _, n_eff = componentwise_ess(chain.x)
        report["x_mean_n_eff"] = float(n_eff.mean())
    if cfg.baseline:
        lam = discrepancy_lambda(prob.A, prob.y, prob.L, prob.sigma_true)
        x_tik = tikhonov_baseline(prob.A, prob.y, prob.L, lam)
        report["tikhonov"] = {"lambda": lam, "relerr": relerr(x_tik, prob.x_true)}
    else:
        x_tik = None

    out = None
    if write and cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        _write_artifacts(out, cfg, prob, chain, summ, report, x_mean, x_median, x_std, x_tik)
    return ExperimentResult(cfg, prob, chain, report, out)


def _write_artifacts(out: Path, cfg, prob, chain, summ, report, x_mean, x_median, x_std,
                     x_tik) -> None:
    out.mkdir(parents=True, exist_ok=True)
    shape = prob.image_shape
    w = artifacts.write_matrix_csv
    w(out / "phantom.csv", _as_image(prob.x_true, shape))
    if cfg.problem == "ct2d":
        w(out / "data.csv", prob.A.sinogram(prob.y))
    else:
        w(out / "data.csv", _as_image(prob.y, shape))
    w(out / "x_mean.csv", _as_image(x_mean, shape))
    w(out / "x_median.csv", _as_image(x_median, shape))
    w(out / "x_std.csv", _as_image(x_std, shape))
    w(out / "x_ci_lower.csv", _as_image(summ["x"].ci_lower, shape))
    w(out / "x_ci_upper.csv", _as_image(summ["x"].ci_upper, shape))
    w(out / "w_mean.csv", _w_map(summ["w"].mean, prob.L))
    w(out / "chain_sigma.csv", np.sqrt(chain.sigma2))
    w(out / "chain_tau.csv", np.sqrt(chain.tau2))
    w(out / "cgls_iters.csv", chain.cgls_trace)
    if x_tik is not None:
        w(out / "x_tikhonov.csv", _as_image(x_tik, shape))

    pgm = {}
    if shape is not None:
        for name, img in (("x_mean", x_mean), ("x_std", x_std), ("phantom", prob.x_true)):
            vmin, vmax = artifacts.write_pgm(out / f"{name}.pgm", _as_image(img, shape))
            pgm[f"{name}.pgm"] = {"min": vmin, "max": vmax}
    report["pgm_scaling"] = pgm

    if cfg.figures:
        from .plotting import render_figures

        report["figures"] = render_figures(out, cfg, prob, chain, summ, x_mean, x_std)
    artifacts.write_json(out / "summary.json", report)
    (out / "report.txt").write_text(format_report(report), newline="\n")


def format_report(report: dict) -> str:
    """Plain-text summary of the main numbers in ``report``."""
    def g(v):
        return "n/a" if v is None else f"{v:.4g}"

    sc = report["scalars"]
    lines = [
        f"problem            {report['problem']}",
        f"m, d, k            {report['m']}, {report['d']}, {report['k']}",
        f"sigma_obs (true)   {g(report['sigma_obs_true'])}",
        f"sigma_obs (post)   mean {g(sc['sigma_obs']['mean'])}  std {g(sc['sigma_obs']['std'])}"
        f"  IACT {g(sc['sigma_obs']['iact'])}  n_eff {sc['sigma_obs']['n_eff']}",
        f"tau (post)         mean {g(sc['tau']['mean'])}  median {g(sc['tau']['median'])}"
        f"  IACT {g(sc['tau']['iact'])}  n_eff {sc['tau']['n_eff']}",
        f"relerr (mean)      {g(report['relerr_mean'])}",
        f"relerr (median)    {g(report['relerr_median'])}",
        f"mean CGLS iters    {g(report['cgls']['mean_iters_after_burn_in'])}"
        f"  (capped draws: {report['cgls']['n_nonconverged']})",
    ]
    if "x_mean_n_eff" in report:
        lines.append(f"mean n_eff of x    {g(report['x_mean_n_eff'])}")
    if "tikhonov" in report:
        t = report["tikhonov"]
        lines.append(f"Tikhonov baseline  relerr {g(t['relerr'])}  lambda {g(t['lambda'])}")
    return "\n".join(lines) + "\n"
