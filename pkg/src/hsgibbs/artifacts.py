"""Reading and writing experiment artifacts.

Matrix CSV layout::

    # rows=<r> cols=<c>
    v11,v12,...
    ...

Values are written with ``%.17g`` so they round-trip exactly; vectors are
stored as a single column.  Images are 8-bit binary PGM (P5) after min-max
scaling; the scaling constants are returned to the caller so they can be
recorded.  Chain checkpoints are a directory holding ``meta.json`` and one
CSV per stored parameter.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "write_matrix_csv",
    "read_matrix_csv",
    "write_pgm",
    "read_pgm",
    "write_json",
    "save_chain",
    "load_chain",
]

_FMT = "%.17g"


def write_matrix_csv(path, data) -> None:
    a = np.asarray(data, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"can only write 1D or 2D arrays, got shape {a.shape}")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# rows={a.shape[0]} cols={a.shape[1]}\n")
        np.savetxt(fh, a, fmt=_FMT, delimiter=",")


def read_matrix_csv(path, squeeze: bool = True) -> np.ndarray:
    """Inverse of :func:`write_matrix_csv`; single columns come back as 1D."""
    with open(path) as fh:
        header = fh.readline().strip()
        try:
            fields = dict(tok.split("=") for tok in header.lstrip("# ").split())
            rows, cols = int(fields["rows"]), int(fields["cols"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: malformed header {header!r}") from exc
        a = np.loadtxt(fh, delimiter=",", ndmin=2) if rows else np.empty((0, cols))
    if a.shape != (rows, cols):
        raise ConfigError(f"{path}: header says {rows}x{cols}, found {a.shape}")
    return a[:, 0] if squeeze and cols == 1 else a


def write_pgm(path, image) -> tuple[float, float]:
    """Write an 8-bit PGM with ``0 -> min`` and ``255 -> max``.

    Returns ``(vmin, vmax)``; a constant image is written as all zeros.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    vmin, vmax = float(img.min()), float(img.max())
    span = vmax - vmin
    scaled = np.zeros(img.shape) if span == 0 else (img - vmin) / span
    pix = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    return vmin, vmax


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM written by :func:`write_pgm` (no comments)."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ConfigError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ConfigError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, NaN as null."""
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


_CHAIN_FIELDS = ("sigma2", "tau2", "gamma", "cgls_iters", "iterations", "x", "w2", "xi")


def save_chain(store, directory) -> Path:
    """Checkpoint a :class:`~hsgibbs.sampler.ChainStore` to ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stored = []
    for name in _CHAIN_FIELDS:
        val = getattr(store, name)
        if val is not None:
            write_matrix_csv(d / f"{name}.csv", val)
            stored.append(name)
    write_matrix_csv(d / "cgls_trace.csv", store.cgls_trace)
    moments = {}
    for name, (mean, var) in store.moments.items():
        write_matrix_csv(d / f"moments_{name}.csv", np.column_stack([mean, var]))
        moments[name] = f"moments_{name}.csv"
    write_json(d / "meta.json", {
        "n_s": store.n_s,
        "n_nonconverged": store.n_nonconverged,
        "fields": stored,
        "moments": moments,
        "metadata": store.metadata,
    })
    return d


def load_chain(directory):
    """Inverse of :func:`save_chain`."""
    from .sampler import ChainStore

    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read chain metadata in {d}") from exc
    vals = {}
    for name in meta["fields"]:
        a = read_matrix_csv(d / f"{name}.csv", squeeze=name not in ("x", "w2", "xi"))
        if name in ("cgls_iters", "iterations"):
            a = a.astype(np.int64)
        vals[name] = a
    moments = {}
    for name, fname in meta.get("moments", {}).items():
        mv = read_matrix_csv(d / fname, squeeze=False)
        moments[name] = (mv[:, 0], mv[:, 1])
    return ChainStore(
        cgls_trace=read_matrix_csv(d / "cgls_trace.csv").astype(np.int64),
        moments=moments,
        n_nonconverged=int(meta["n_nonconverged"]),
        metadata=meta["metadata"],
        **vals,
    )
