"""Low-rank factorization and magnitude pruning of weight matrices.

Three interchangeable compressors for an m x n matrix W:

* truncated SVD: the Frobenius-optimal rank-r factorization,
* semi-NMF: W ~ U V with V constrained nonnegative,
* magnitude pruning with the keep budget aligned to r(m+n) entries,
  the parameter count of a rank-r pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidBudget, InvalidRank
from .linalg import Matrix, as_matrix, svd_full

__all__ = [
    "FactorizedMatrix",
    "PrunedMatrix",
    "SemiNmfOptions",
    "prune_magnitude",
    "rank_to_keep_count",
    "reconstruct",
    "semi_nmf",
    "truncated_svd",
]


@dataclass(frozen=True)
class FactorizedMatrix:
    """Rank-r pair (u, v) standing in for a dense m x n matrix.

    u is (m, r) with the singular-value scale folded in, v is (r, n).
    Applied as u @ (v @ x); the product u @ v is never stored.
    """

    u: Matrix
    v: Matrix

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[1])

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def param_count(self) -> int:
        return self.u.size + self.v.size


@dataclass(frozen=True)
class PrunedMatrix:
    """Dense matrix with all but `kept` entries zeroed, plus the mask."""

    w: Matrix
    mask: np.ndarray
    kept: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def param_count(self) -> int:
        return self.kept


@dataclass(frozen=True)
class SemiNmfOptions:
    max_iters: int = 200
    rel_tol: float = 1e-4
    eps: float = 1e-8


def _check_rank(shape: tuple[int, int], rank: int) -> None:
    limit = min(shape)
    if not 1 <= rank <= limit:
        raise InvalidRank(f"rank must be in 1..{limit} for shape {shape}, "
                          f"got {rank}")


def truncated_svd(w, rank: int) -> FactorizedMatrix:
    """Best rank-`rank` factorization of w in the Frobenius norm.

    Returns u = U_r diag(S_r) and v = Vt_r from the economy SVD, so the
    reconstruction u @ v is the Eckart-Young optimum.
    """
    arr = as_matrix(w)
    _check_rank(arr.shape, rank)
    res = svd_full(arr)
    u = res.u[:, :rank] * res.s[:rank]
    v = res.vt[:rank, :]
    return FactorizedMatrix(u=np.ascontiguousarray(u),
                            v=np.ascontiguousarray(v))


def semi_nmf(w, rank: int,
             opts: SemiNmfOptions | None = None
             ) -> tuple[FactorizedMatrix, list[float]]:
    """Factor w ~ u @ v with v nonnegative, mixed-sign u.

    Alternates an exact ridge least-squares solve for u with a
    multiplicative update for v that cannot turn entries negative.
    v starts from |Vt_r| of the truncated SVD. Returns the factors and
    the squared Frobenius objective after each full alternation; the
    trace is non-increasing. Running out of iterations is not an error,
    the best factors seen are returned.
    """
    arr = as_matrix(w)
    _check_rank(arr.shape, rank)
    if opts is None:
        opts = SemiNmfOptions()
    eps = float(opts.eps)

    target = arr.astype(np.float64)
    res = svd_full(arr)
    v = np.abs(res.vt[:rank, :].astype(np.float64)) + eps
    eye = np.eye(rank)

    def solve_u(vmat: np.ndarray) -> np.ndarray:
        gram = vmat @ vmat.T + eps * eye
        return np.linalg.solve(gram, vmat @ target.T).T

    u = solve_u(v)
    trace: list[float] = []
    best_obj = np.inf
    best = (u, v)
    prev = np.inf
    for _ in range(int(opts.max_iters)):
        u = solve_u(v)
        cross = u.T @ target            # (r, n)
        gram = u.T @ u                  # (r, r)
        cross_p = (np.abs(cross) + cross) * 0.5
        cross_n = (np.abs(cross) - cross) * 0.5
        gram_p = (np.abs(gram) + gram) * 0.5
        gram_n = (np.abs(gram) - gram) * 0.5
        num = cross_p + gram_n @ v
        den = cross_n + gram_p @ v
        v = v * np.sqrt(num / np.maximum(den, 1e-30))
        v = np.maximum(v, eps)
        obj = float(np.linalg.norm(target - u @ v) ** 2)
        trace.append(obj)
        if obj < best_obj:
            best_obj = obj
            best = (u, v)
        if prev - obj < opts.rel_tol * max(prev, 1e-30):
            break
        prev = obj

    u, v = best
    fact = FactorizedMatrix(u=np.ascontiguousarray(u.astype(np.float32)),
                            v=np.ascontiguousarray(v.astype(np.float32)))
    return fact, trace


def rank_to_keep_count(rows: int, cols: int, rank: int) -> int:
    """Pruning budget matching a rank-`rank` pair: r(m+n), clamped to mn."""
    if rows < 1 or cols < 1:
        raise InvalidBudget(f"matrix dims must be positive, got {rows}x{cols}")
    if rank < 1:
        raise InvalidBudget(f"rank must be >= 1, got {rank}")
    return min(rank * (rows + cols), rows * cols)


def prune_magnitude(w, keep: int) -> PrunedMatrix:
    """Zero all but the `keep` largest-magnitude entries of w.

    Magnitude ties are broken by row-major position, earlier entries
    kept, so the surviving set is a deterministic function of w.
    """
    arr = as_matrix(w)
    total = arr.size
    if not 1 <= keep <= total:
        raise InvalidBudget(f"keep must be in 1..{total}, got {keep}")
    flat = np.abs(arr).ravel()
    # stable sort on descending magnitude preserves row-major order of ties
    order = np.argsort(-flat, kind="stable")[:keep]
    mask = np.zeros(total, dtype=bool)
    mask[order] = True
    mask = mask.reshape(arr.shape)
    return PrunedMatrix(w=np.where(mask, arr, np.float32(0.0)),
                        mask=mask, kept=int(keep))


def reconstruct(compressed) -> Matrix:
    """Dense float32 matrix a compressed form stands in for."""
    if isinstance(compressed, FactorizedMatrix):
        dense = compressed.u.astype(np.float64) @ compressed.v.astype(np.float64)
        return np.ascontiguousarray(dense.astype(np.float32))
    if isinstance(compressed, PrunedMatrix):
        return compressed.w.copy()
    raise TypeError(f"cannot reconstruct {type(compressed).__name__}")
