"""Matrix conventions, seeded generation, SVD, and norm diagnostics.

A "matrix" throughout the package is a non-empty 2-D float32 numpy array
in row-major order. Reductions and decompositions accumulate in float64
and hand back float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMatrix, InvalidShape

__all__ = [
    "Matrix",
    "NormStats",
    "SvdResult",
    "as_matrix",
    "derive_seed",
    "norm_stats",
    "prng_matrix",
    "svd_full",
]

Matrix = np.ndarray

# SplitMix64 constants (Steele, Lea & Flood's mixer).
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def prng_matrix(rows: int, cols: int, seed: int, scale: float = 1.0) -> Matrix:
    """Seeded float32 matrix, entries uniform in [-scale, +scale].

    Output is a pure function of the arguments and is identical across
    platforms: entry k (row-major) is the k-th SplitMix64 draw from
    `seed`, mapped through the top 53 bits to [0, 1).
    """
    if rows < 1 or cols < 1:
        raise InvalidShape(f"matrix dims must be positive, got {rows}x{cols}")
    if not np.isfinite(scale) or scale < 0:
        raise ValueError(f"scale must be finite and >= 0, got {scale}")
    count = rows * cols
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix64(np.uint64(seed & _MASK64) + idx * _GAMMA)
    unit = (bits >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    vals = (2.0 * unit - 1.0) * scale
    return np.ascontiguousarray(vals.reshape(rows, cols).astype(np.float32))


def derive_seed(seed: int, stream: int) -> int:
    """Stable sub-seed for the `stream`-th consumer of a run seed."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + np.uint64((stream + 1) & _MASK64) * _GAMMA
        return int(_mix64(z))


def as_matrix(w, name: str = "matrix") -> Matrix:
    """Validate and return `w` as a C-contiguous float32 matrix."""
    arr = np.asarray(w)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidMatrix(f"{name} must be a non-empty 2-D array, "
                            f"got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating) and \
            not np.issubdtype(arr.dtype, np.integer):
        raise InvalidMatrix(f"{name} must be real-valued, got {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Economy SVD, singular values descending.

    u is (m, k), s is (k,), vt is (k, n) with k = min(m, n). Signs are
    fixed so the largest-magnitude entry of each u column is positive.
    """

    u: Matrix
    s: np.ndarray
    vt: Matrix


def svd_full(w) -> SvdResult:
    """Economy SVD of a matrix, computed in float64, stored in float32."""
    arr = as_matrix(w, "svd input")
    u, s, vt = np.linalg.svd(arr.astype(np.float64), full_matrices=False)
    # sign convention: dominant entry of each left vector positive,
    # first occurrence wins on magnitude ties
    flip = u[np.abs(u).argmax(axis=0), np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    vt[flip, :] *= -1.0
    return SvdResult(u=u.astype(np.float32), s=s.astype(np.float32),
                     vt=vt.astype(np.float32))


@dataclass(frozen=True)
class NormStats:
    """Entrywise and spectral summaries of one matrix.

    l1 is the sum of absolute entries, l1_std the population standard
    deviation of those absolute entries, nuclear the sum of singular
    values.
    """

    l1: float
    l1_std: float
    nuclear: float


def norm_stats(w) -> NormStats:
    arr = as_matrix(w, "norm input").astype(np.float64)
    mag = np.abs(arr)
    s = np.linalg.svd(arr, compute_uv=False)
    return NormStats(l1=float(mag.sum()), l1_std=float(mag.std()),
                     nuclear=float(s.sum()))
