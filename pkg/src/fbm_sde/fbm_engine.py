"""Exact simulation of fractional Brownian motion on equidistant grids of [0, 1].

Two exact samplers are provided: a dense Cholesky factorisation of the grid
covariance and circulant embedding of the fractional Gaussian noise
(Davies-Harte).  Factorisations are cached per ``(n, h)`` and shared.

Random streams are counter based: path ``i`` of a run with master seed ``s``
always draws from ``Philox`` keyed by ``(s, i)``, so results do not depend on
how paths are grouped or ordered.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy import linalg

__all__ = [
    "EIGENVALUE_TOLERANCE",
    "TimeGrid",
    "FbmPath",
    "EmbeddingError",
    "check_hurst",
    "covariance",
    "increment_covariance",
    "grid_covariance",
    "path_stream",
    "cholesky_factor",
    "circulant_eigenvalues",
    "sample_cholesky",
    "sample_circulant",
    "sample_paths",
    "linear_interpolant",
    "conditional_mean",
    "subsample",
    "write_paths_csv",
]

EIGENVALUE_TOLERANCE = 1e-9


class EmbeddingError(RuntimeError):
    """The circulant embedding has a significantly negative eigenvalue."""


def check_hurst(h: float, *, sde: bool = False) -> float:
    h = float(h)
    if sde:
        if not 0.5 < h < 1.0:
            raise ValueError(f"Hurst index must lie in (1/2, 1) for SDE work, got {h}")
    elif not 0.0 < h < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {h}")
    return h


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant grid ``t_i = i/n`` on [0, 1]."""

    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"number of steps must be a positive integer, got {self.n}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n


@dataclass(frozen=True)
class FbmPath:
    """Values ``B_{t_0}, ..., B_{t_n}`` of one sampled path; ``values[0] == 0``."""

    values: np.ndarray
    hurst: float
    stream_id: int = 0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("path needs at least two node values")
        if values[0] != 0.0:
            raise ValueError("fBm path must start at 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.n)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def _check_time(t, name: str = "t") -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def covariance(s, t, h: float):
    """``R_H(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2``; vectorised."""
    h = check_hurst(h)
    s = _check_time(s, "s")
    t = _check_time(t, "t")
    two_h = 2.0 * h
    out = 0.5 * (s**two_h + t**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def increment_covariance(k, n: int, h: float):
    """Autocovariance of the increments ``E[dB_i dB_{i+k}]`` at spacing ``1/n``."""
    h = check_hurst(h)
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("lag must be non-negative")
    two_h = 2.0 * h
    out = 0.5 * n ** (-two_h) * (np.abs(k + 1) ** two_h - 2 * k**two_h + np.abs(k - 1) ** two_h)
    return float(out) if out.ndim == 0 else out


def grid_covariance(n: int, h: float) -> np.ndarray:
    """Covariance matrix of ``(B_{t_1}, ..., B_{t_n})``; ``B_0`` is excluded."""
    t = np.arange(1, n + 1) / n
    return covariance(t[:, None], t[None, :], h)


def path_stream(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one path, keyed by ``(master_seed, path_index)``."""
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(path_index)])
    return np.random.Generator(np.random.Philox(seq))


@functools.lru_cache(maxsize=64)
def cholesky_factor(n: int, h: float) -> np.ndarray:
    """Lower Cholesky factor of :func:`grid_covariance` (cached, read-only)."""
    try:
        factor = linalg.cholesky(grid_covariance(n, h), lower=True)
    except linalg.LinAlgError as exc:  # pragma: no cover - PD for all valid h
        raise RuntimeError(f"covariance matrix not positive definite (n={n}, h={h})") from exc
    factor.setflags(write=False)
    return factor


@functools.lru_cache(maxsize=64)
def circulant_eigenvalues(n: int, h: float) -> np.ndarray:
    """Eigenvalues of the size-``2n`` circulant embedding of unit-spacing fGn.

    Values in ``[-1e-9, 0)`` are clamped to zero; anything more negative
    raises :class:`EmbeddingError`.
    """
    h = check_hurst(h)
    gamma = increment_covariance(np.arange(n + 1), 1, h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -EIGENVALUE_TOLERANCE:
        raise EmbeddingError(f"negative circulant eigenvalue {eig.min():.3e} (n={n}, h={h})")
    eig = np.where(eig < 0.0, 0.0, eig)
    eig.setflags(write=False)
    return eig


def _normals(stream, size: int) -> np.ndarray:
    return np.asarray(stream.standard_normal(size), dtype=float).reshape(size)


def sample_cholesky(n: int, h: float, stream: np.random.Generator, stream_id: int = 0) -> FbmPath:
    """One exact fBm path via the cached Cholesky factor; uses ``n`` normals."""
    h = check_hurst(h)
    z = _normals(stream, n)
    values = np.empty(n + 1)
    values[0] = 0.0
    values[1:] = cholesky_factor(n, h) @ z
    return FbmPath(values, h, stream_id)


def _circulant_from_normals(z: np.ndarray, n: int, h: float) -> np.ndarray:
    """Map rows of ``4n`` normals to fBm node values, shape ``(..., n+1)``."""
    m = 2 * n
    eig = circulant_eigenvalues(n, h)
    w = np.sqrt(eig / m) * (z[..., :m] + 1j * z[..., m:])
    fgn = np.fft.fft(w, axis=-1).real[..., :n] * n ** (-h)
    out = np.zeros(z.shape[:-1] + (n + 1,))
    np.cumsum(fgn, axis=-1, out=out[..., 1:])
    return out


def sample_circulant(n: int, h: float, stream: np.random.Generator, stream_id: int = 0) -> FbmPath:
    """One exact fBm path by circulant embedding; O(n log n) after setup."""
    h = check_hurst(h)
    if n == 1:
        return FbmPath(np.array([0.0, _normals(stream, 1)[0]]), h, stream_id)
    z = _normals(stream, 4 * n)
    return FbmPath(_circulant_from_normals(z, n, h), h, stream_id)


def sample_paths(
    n: int,
    h: float,
    master_seed: int,
    path_ids: Iterable[int],
    method: str = "circulant",
) -> np.ndarray:
    """Node values for several paths, shape ``(len(path_ids), n + 1)``.

    Row ``r`` equals ``sample_<method>(n, h, path_stream(master_seed, path_ids[r])).values``
    exactly, whatever the batch.
    """
    h = check_hurst(h)
    ids = list(path_ids)
    if method == "cholesky":
        factor = cholesky_factor(n, h)
        out = np.zeros((len(ids), n + 1))
        # row-wise matvec: bitwise identical to sample_cholesky for any batch
        for r, i in enumerate(ids):
            out[r, 1:] = factor @ _normals(path_stream(master_seed, i), n)
        return out
    if method == "circulant":
        if n == 1:
            return np.stack(
                [sample_circulant(1, h, path_stream(master_seed, i)).values for i in ids]
            ) if ids else np.empty((0, 2))
        z = np.stack([_normals(path_stream(master_seed, i), 4 * n) for i in ids]) if ids else np.empty((0, 4 * n))
        return _circulant_from_normals(z, n, h)
    raise ValueError(f"unknown sampling method {method!r}")


def linear_interpolant(path: FbmPath | np.ndarray, t):
    """Piecewise-linear interpolant of the node values at time(s) ``t``."""
    values = path.values if isinstance(path, FbmPath) else np.asarray(path, dtype=float)
    t = _check_time(t)
    n = values.shape[-1] - 1
    nodes = np.arange(n + 1) / n
    if values.ndim == 1:
        out = np.interp(t, nodes, values)
        return float(out) if np.ndim(out) == 0 else out
    return np.stack([np.interp(t, nodes, row) for row in values])


@functools.lru_cache(maxsize=32)
def _grid_cho(n: int, h: float):
    return linalg.cho_factor(grid_covariance(n, h), lower=True)


def conditional_mean(values: Sequence[float] | np.ndarray, h: float, t) -> np.ndarray | float:
    """``E(B_t | B_{t_1}, ..., B_{t_n})`` by Gaussian regression on the grid.

    ``values`` are node values including ``B_0 = 0``; the last axis indexes
    nodes so several paths can be conditioned at once.
    """
    h = check_hurst(h)
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    if n < 1:
        raise ValueError("need at least one grid step")
    t = _check_time(t)
    nodes = np.arange(1, n + 1) / n
    r = covariance(nodes[:, None], np.atleast_1d(t)[None, :], h)
    coef = linalg.cho_solve(_grid_cho(n, h), r)
    out = values[..., 1:] @ coef
    if np.ndim(t) == 0:
        out = out[..., 0]
    return float(out) if np.ndim(out) == 0 else out


def subsample(path: FbmPath | np.ndarray, factor: int):
    """Every ``factor``-th node of ``path``; an exact fBm path on the coarse grid."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    values = path.values if isinstance(path, FbmPath) else np.asarray(path)
    n = values.shape[-1] - 1
    if n % factor:
        raise ValueError(f"factor {factor} does not divide the {n} fine steps")
    coarse = values[..., ::factor]
    if isinstance(path, FbmPath):
        return FbmPath(coarse.copy(), path.hurst, path.stream_id)
    return coarse


def write_paths_csv(rows: np.ndarray, out: TextIO, path_ids: Sequence[int] | None = None) -> int:
    """Write ``path_id,t,value`` rows with 17 significant digits; returns row count."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    ids = list(path_ids) if path_ids is not None else list(range(rows.shape[0]))
    n = rows.shape[1] - 1
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["path_id", "t", "value"])
    count = 0
    for pid, row in zip(ids, rows):
        for k, v in enumerate(row):
            writer.writerow([pid, f"{k / n:.17g}", f"{v:.17g}"])
            count += 1
    return count
