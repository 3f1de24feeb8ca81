"""PNG figures for experiment reports (matplotlib, Agg backend).

Figures are written without timestamp or software metadata so repeated runs
produce identical files.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .diagnostics import autocorrelation  # noqa: E402

__all__ = ["render_figures"]

_PNG_META = {"Software": None}


def _save(fig, path: Path) -> str:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path.name


def _chain_panel(axes, chain, label):
    ax_h, ax_c, ax_a = axes
    ax_h.hist(chain, bins=40, color="0.6", edgecolor="0.3")
    ax_h.set_xlabel(label)
    ax_c.plot(chain, lw=0.5, color="k")
    ax_c.plot(np.cumsum(chain) / np.arange(1, chain.size + 1), color="tab:red", lw=1)
    ax_c.set_xlabel("sample")
    rho = autocorrelation(chain, max_lag=min(50, chain.size - 1))
    ax_a.stem(np.arange(rho.size), rho, basefmt=" ")
    ax_a.set_xlabel("lag")
    ax_a.set_ylim(-0.3, 1.05)


def render_figures(out: Path, cfg, prob, chain, summ, x_mean, x_std) -> list[str]:
    """Write the report figures to ``out`` and return their file names."""
    out = Path(out)
    names = []

    fig, axes = plt.subplots(2, 3, figsize=(11, 6), constrained_layout=True)
    _chain_panel(axes[0], np.sqrt(chain.sigma2), r"$\sigma_{obs}$")
    _chain_panel(axes[1], np.sqrt(chain.tau2), r"$\tau$")
    names.append(_save(fig, out / "fig_hyperparameters.png"))

    if cfg.gibbs.strategy != "direct":
        fig, ax = plt.subplots(figsize=(6, 3.5), constrained_layout=True)
        it = chain.cgls_trace
        ax.plot(it, lw=0.4, color="0.5")
        ax.plot(np.cumsum(it) / np.arange(1, it.size + 1), color="k")
        ax.axvline(cfg.gibbs.n_b, color="tab:red")
        ax.set_xlabel("Gibbs iteration")
        ax.set_ylabel("CGLS iterations")
        names.append(_save(fig, out / "fig_cgls_iterations.png"))

    if prob.image_shape is None:
        t = np.arange(prob.x_true.size)
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 3.8), constrained_layout=True)
        ax1.fill_between(t, summ["x"].ci_lower, summ["x"].ci_upper, color="0.8",
                         label="95% CI")
        ax1.plot(t, prob.x_true, "k", lw=1, label="true")
        ax1.plot(t, x_mean, "--", color="tab:blue", label="mean")
        ax1.legend(frameon=False)
        ax1.set_xlabel("index")
        w = summ["w"]
        ax2.fill_between(t, w.ci_lower, w.ci_upper, color="0.8")
        ax2.plot(t, w.mean, color="k")
        ax2.set_xlabel("increment index")
        ax2.set_ylabel("w")
        names.append(_save(fig, out / "fig_solution.png"))
        return names

    shape = prob.image_shape
    imgs = [("true", prob.x_true), ("posterior mean", x_mean), ("posterior std", x_std)]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.8), constrained_layout=True)
    for ax, (title, v) in zip(axes, imgs):
        im = ax.imshow(np.asarray(v).reshape(shape, order="F"), cmap="gray")
        ax.set_title(title)
        ax.axis("off")
        fig.colorbar(im, ax=ax, shrink=0.8)
    names.append(_save(fig, out / "fig_images.png"))

    w1, w2 = prob.L.split(summ["w"].mean)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.8), constrained_layout=True)
    for ax, (title, v) in zip(axes, (("w mean, vertical differences", w1),
                                     ("w mean, horizontal differences", w2))):
        im = ax.imshow(v, cmap="magma")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
        fig.colorbar(im, ax=ax, shrink=0.8)
    names.append(_save(fig, out / "fig_w_maps.png"))
    return names
