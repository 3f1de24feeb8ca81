"""Independent reference computations shared by the unit and acceptance tests.

The conjugacy oracles rebuild each hyperparameter conditional by brute force:
prior density times likelihood evaluated with scipy.stats on a log-spaced
grid, normalized numerically.  Nothing here calls the closed-form parameter
functions of the package.
"""
import numpy as np
import scipy.stats as stats
from scipy.special import logsumexp


def log_grid(center, half_width=14.0, n=20001):
    """Grid in ``t = log v`` around ``log(center)``."""
    return np.linspace(np.log(center) - half_width, np.log(center) + half_width, n)


def normalize_on_grid(logdens_v, t):
    """Probability masses on the grid for a density given in ``v = exp(t)``."""
    lp = logdens_v + t  # Jacobian dv = v dt
    return np.exp(lp - logsumexp(lp))


def kl(p, q):
    mask = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def ig_logpdf(v, shape, scale):
    return stats.invgamma(shape, scale=scale).logpdf(v)


def brute_noise_var(v, resid, alpha, beta):
    """prior IG(alpha, 1/beta) times prod N(r_i; 0, v)."""
    out = ig_logpdf(v, alpha, 1.0 / beta)
    return out + stats.norm.logpdf(resid[None, :], scale=np.sqrt(v)[:, None]).sum(axis=1)


def brute_global_var(v, Lx, w2, gamma, nu):
    """prior IG(nu/2, nu/gamma) times prod N([Lx]_i; 0, v w_i^2)."""
    out = ig_logpdf(v, nu / 2.0, nu / gamma)
    return out + stats.norm.logpdf(Lx[None, :], scale=np.sqrt(v[:, None] * w2)).sum(axis=1)


def brute_local_var(v, lx, tau2, xi, nu):
    """prior IG(nu/2, nu/xi) times N(lx; 0, tau2 v)."""
    return ig_logpdf(v, nu / 2.0, nu / xi) + stats.norm.logpdf(lx, scale=np.sqrt(tau2 * v))


def brute_gamma(v, tau2, tau0_sq, nu):
    """prior IG(1/2, 1/tau0^2) times IG(tau2; nu/2, nu/v)."""
    return ig_logpdf(v, 0.5, 1.0 / tau0_sq) + ig_logpdf(tau2, nu / 2.0, nu / v)


def brute_xi(v, w2, nu):
    """prior IG(1/2, 1) times IG(w2; nu/2, nu/v)."""
    return ig_logpdf(v, 0.5, 1.0) + ig_logpdf(w2, nu / 2.0, nu / v)


def random_conjugacy_case(rng):
    """One randomized scalar configuration of all the conditioning values."""
    m = int(rng.integers(3, 12))
    k = int(rng.integers(2, 8))
    return dict(
        resid=rng.normal(0, np.exp(rng.uniform(-3, 0)), m),
        alpha=float(np.exp(rng.uniform(-1, 1))),
        beta=float(10 ** rng.uniform(0, 4)),
        Lx=rng.normal(0, np.exp(rng.uniform(-2, 0)), k),
        w2=np.exp(rng.normal(0, 1, k)),
        gamma=float(np.exp(rng.normal())),
        tau2=float(np.exp(rng.normal(-1, 1))),
        xi=float(np.exp(rng.normal())),
        tau0_sq=float(np.exp(rng.normal(-2, 1))),
        nu=float(rng.choice([1.0, 2.0, 3.0, 5.0])),
    )


def conjugacy_kls(case, closed_forms):
    """KL(closed form || brute force) for the five hyperparameter conditionals.

    ``closed_forms`` maps each name to a ``(shape, scale)`` pair of the
    inverse-gamma the package claims for that conditional.
    """
    c = case
    brute = {
        "noise_var": lambda v: brute_noise_var(v, c["resid"], c["alpha"], c["beta"]),
        "global_var": lambda v: brute_global_var(v, c["Lx"], c["w2"], c["gamma"], c["nu"]),
        "local_var": lambda v: brute_local_var(v, c["Lx"][0], c["tau2"], c["xi"], c["nu"]),
        "gamma": lambda v: brute_gamma(v, c["tau2"], c["tau0_sq"], c["nu"]),
        "xi": lambda v: brute_xi(v, c["w2"][0], c["nu"]),
    }
    out = {}
    for name, (shape, scale) in closed_forms.items():
        center = scale / (shape + 1.0)
        t = log_grid(center, n=4001)
        v = np.exp(t)
        p = normalize_on_grid(ig_logpdf(v, shape, scale), t)
        q = normalize_on_grid(brute[name](v), t)
        out[name] = kl(p, q)
    return out
