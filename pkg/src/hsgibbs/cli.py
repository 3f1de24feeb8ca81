"""Command-line entry point.

Configuration files are flat ``key = value`` lines (``#`` or ``;`` start a
comment).  Recognised keys::

    problem       deconv1d | deblur2d | ct2d
    N             grid size (d for deconv1d, image side otherwise)
    noise_level   relative noise, e.g. 0.02
    kernel_width  deconvolution kernel width s
    p, q          CT detector count and number of angles
    seed          data-noise and chain seed
    phantom_seed  grains phantom seed
    n_s, n_b, n_t chain length, burn-in, thinning
    strategy      direct | cgls | pcgls
    eps_cgls      CGLS tolerance
    n_max         CGLS iteration cap (default m + d)
    storage       full | moments
    nu, tau0_mode, tau0, alpha_obs, beta_obs   prior settings
    figures       yes | no
    baseline      yes | no
    out           output directory

Command-line flags override the file; unset keys take the defaults of the
chosen problem.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import traceback
from dataclasses import fields
from pathlib import Path

from .exceptions import ConfigError, FactorizationError, InvalidParameterError
from .experiments import PROBLEMS, default_config, run_experiment
from .prior import HorseshoeParams
from .sampler import STRATEGIES, GibbsConfig

__all__ = ["main", "build_parser", "load_config_file", "config_from_mapping"]

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_INT_KEYS = {"N", "p", "q", "seed", "phantom_seed", "n_s", "n_b", "n_t", "n_max"}
_FLOAT_KEYS = {"noise_level", "kernel_width", "eps_cgls", "nu", "tau0", "alpha_obs",
               "beta_obs"}
_BOOL_KEYS = {"figures", "baseline"}
_STR_KEYS = {"problem", "strategy", "storage", "tau0_mode", "out"}
_GIBBS_KEYS = {f.name for f in fields(GibbsConfig)} - {"seed"}
_PARAM_KEYS = {f.name for f in fields(HorseshoeParams)}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _STR_KEYS


def load_config_file(path) -> dict:
    """Parse a flat key-value file into a dict of typed values."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    parser.optionxform = str
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        parser.read_string("[experiment]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = dict(parser["experiment"])
    return {key: _convert(key, val) for key, val in raw.items()}


def _convert(key: str, val):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        if key in _INT_KEYS:
            return int(val)
        if key in _FLOAT_KEYS:
            return float(val)
        if key in _BOOL_KEYS:
            low = str(val).strip().lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(val)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
    return str(val).strip()


def config_from_mapping(values: dict):
    """Build an :class:`~hsgibbs.experiments.ExperimentConfig` from typed
    key-value settings, filling in the problem defaults."""
    values = dict(values)
    problem = values.pop("problem", "deconv1d")
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; choose from {PROBLEMS}")
    gibbs = {k: values.pop(k) for k in list(values) if k in _GIBBS_KEYS}
    params = {k: values.pop(k) for k in list(values) if k in _PARAM_KEYS}
    if "out" in values:
        values["out_dir"] = values.pop("out")
    try:
        return default_config(problem, gibbs=gibbs, params=params, **values)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hsgibbs",
        description="Horseshoe-prior Gibbs sampling for linear inverse problems.")
    ap.add_argument("--problem", choices=PROBLEMS)
    ap.add_argument("--config", metavar="PATH", help="flat key = value settings file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--strategy", choices=STRATEGIES)
    ap.add_argument("--tol", type=float, dest="eps_cgls", help="CGLS tolerance")
    ap.add_argument("--nmax", type=int, dest="n_max", help="CGLS iteration cap")
    ap.add_argument("--ns", type=int, dest="n_s", help="retained samples")
    ap.add_argument("--nb", type=int, dest="n_b", help="burn-in iterations")
    ap.add_argument("--nt", type=int, dest="n_t", help="thinning lag")
    ap.add_argument("--N", type=int, dest="N", help="grid size")
    ap.add_argument("--noise", type=float, dest="noise_level", help="relative noise level")
    ap.add_argument("--storage", choices=("full", "moments"))
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    ap.add_argument("--no-baseline", dest="baseline", action="store_false", default=None)
    ap.add_argument("--log-level", default="INFO",
                    choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        values = load_config_file(args.config) if args.config else {}
        for key in ("problem", "seed", "strategy", "eps_cgls", "n_max", "n_s", "n_b", "n_t",
                    "N", "noise_level", "storage", "out", "figures", "baseline"):
            val = getattr(args, key)
            if val is not None:
                values[key] = val
        if "out" not in values:
            raise ConfigError("no output directory given (use --out or 'out =')")
        cfg = config_from_mapping(values)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"hsgibbs: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run_experiment(cfg)
    except (FactorizationError, FloatingPointError) as exc:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump = out / "failure.txt"
        state = getattr(exc, "gibbs_state", None)
        dump.write_text(f"{type(exc).__name__}: {exc}\n\nstate: {state}\n\n"
                        + traceback.format_exc())
        print(f"hsgibbs: numerical failure: {exc} (details in {dump})", file=sys.stderr)
        return EXIT_NUMERICAL
    print((result.out_dir / "report.txt").read_text(), end="")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
