"""Piecewise-constant test images for the experiments.

All generators are deterministic given their arguments and return values in
``[0, 1]``.  2D phantoms are ``N x N`` arrays indexed ``[row, col]``; use
:func:`hsgibbs.operators.vec` to obtain the column-major vector the
operators act on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidDimensionError, InvalidParameterError

__all__ = [
    "PHANTOM_KINDS",
    "Phantom",
    "piecewise_constant_1d",
    "geometric_shapes_2d",
    "grains_2d",
    "make_phantom",
    "jump_locations",
]

PHANTOM_KINDS = ("piecewiseConstant1D", "geometricShapes2D", "grains2D")

# breakpoints on [0, 1] and the level on each of the six segments
_STEPS_1D = (
    (0.10, 0.22, 0.33, 0.58, 0.70),
    (0.0, 0.5, 1.0, 0.0, 0.6, 0.0),
)

# grey levels for the grains phantom
GRAIN_PALETTE = (0.2, 0.35, 0.5, 0.65, 0.8, 1.0)


@dataclass
class Phantom:
    kind: str
    values: np.ndarray
    descriptor: dict = field(default_factory=dict)

    @property
    def image(self) -> np.ndarray:
        """2D array view (row-major ``[row, col]``) for 2D kinds."""
        return self.values


def piecewise_constant_1d(d: int, amplitude: float = 1.0) -> np.ndarray:
    """Step signal sampled at the cell midpoints ``(i + 1/2)/d``.

    Two plateaus and a box on a zero background (five jumps, flat zero
    stretches at both ends and in the middle); ``amplitude`` scales
    all levels (must lie in ``(0, 1]`` to keep values in ``[0, 1]``).
    """
    if d < 2:
        raise InvalidDimensionError(f"d must be at least 2, got {d}")
    if not 0 < amplitude <= 1:
        raise InvalidParameterError(f"amplitude must be in (0, 1], got {amplitude}")
    t = (np.arange(d) + 0.5) / d
    breaks, levels = _STEPS_1D
    return amplitude * np.asarray(levels)[np.searchsorted(breaks, t, side="right")]


def geometric_shapes_2d(N: int) -> np.ndarray:
    """A rectangle and a disk with different intensities on a zero background."""
    if N < 8:
        raise InvalidDimensionError(f"N must be at least 8, got {N}")
    X = np.zeros((N, N))
    r0, r1 = int(round(0.15 * N)), int(round(0.55 * N))
    c0, c1 = int(round(0.12 * N)), int(round(0.45 * N))
    X[r0:r1, c0:c1] = 0.6
    rows, cols = np.mgrid[0:N, 0:N] + 0.5
    disk = (rows - 0.65 * N) ** 2 + (cols - 0.68 * N) ** 2 <= (0.2 * N) ** 2
    X[disk] = 1.0
    return X


def grains_2d(N: int, seed: int = 0, n_grains: int = 30) -> np.ndarray:
    """Voronoi partition of the square with one palette intensity per cell.

    Cell intensities are drawn so that no two cells sharing an edge in the
    pixel grid get the same value, which makes every cell boundary a true
    edge of the image.
    """
    if N < 8:
        raise InvalidDimensionError(f"N must be at least 8, got {N}")
    if n_grains < 2:
        raise InvalidParameterError("need at least two grains")
    rng = np.random.default_rng(seed)
    sites = rng.uniform(0, N, size=(n_grains, 2))
    rows, cols = np.mgrid[0:N, 0:N] + 0.5
    dist = (rows[..., None] - sites[:, 0]) ** 2 + (cols[..., None] - sites[:, 1]) ** 2
    labels = np.argmin(dist, axis=-1)

    adjacent = [set() for _ in range(n_grains)]
    for a, b in ((labels[1:, :], labels[:-1, :]), (labels[:, 1:], labels[:, :-1])):
        mask = a != b
        for i, j in zip(a[mask], b[mask]):
            adjacent[i].add(j)
            adjacent[j].add(i)
    palette = np.asarray(GRAIN_PALETTE)
    value = np.full(n_grains, -1.0)
    for g in range(n_grains):
        taken = {value[h] for h in adjacent[g] if value[h] >= 0}
        free = [v for v in palette if v not in taken]
        value[g] = rng.choice(free if free else palette)
    return value[labels]


def make_phantom(kind: str, N: int, seed: int = 0, **kwargs) -> Phantom:
    """Dispatch on ``kind``; ``N`` is ``d`` for the 1D signal."""
    if kind == "piecewiseConstant1D":
        vals = piecewise_constant_1d(N, **kwargs)
    elif kind == "geometricShapes2D":
        vals = geometric_shapes_2d(N)
    elif kind == "grains2D":
        vals = grains_2d(N, seed=seed, **kwargs)
    else:
        raise InvalidParameterError(f"unknown phantom kind {kind!r}")
    desc = {"kind": kind, "N": N, "seed": seed}
    desc.update(kwargs)
    return Phantom(kind, vals, desc)


def jump_locations(x: np.ndarray) -> np.ndarray:
    """Indices ``i`` with a nonzero increment ``x[i] - x[i-1]`` (``x[-1] = 0``)."""
    x = np.asarray(x, dtype=float)
    inc = np.diff(x, prepend=0.0)
    return np.flatnonzero(inc != 0)
