"""Apply a compression recipe to a model's weight slots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlreadyCompressed, InvalidRank, ShapeError
from .factorize import (SemiNmfOptions, prune_magnitude, rank_to_keep_count,
                        semi_nmf, truncated_svd)
from .model import GATES, FactorizedSlot, LstmLmModel, PrunedSlot

METHODS = ("svd", "semi-nmf", "prune")
TARGETS = ("w_i", "w_h", "both")
SCOPES = ("per-gate", "stacked")

__all__ = [
    "METHODS",
    "SCOPES",
    "TARGETS",
    "CompressionSpec",
    "CompressionReport",
    "SlotReport",
    "compress_model",
]


@dataclass(frozen=True)
class CompressionSpec:
    """What to compress and how.

    rank drives all three methods; for pruning it sets the keep budget
    rank*(rows+cols) per compressed block. layers=None means every
    layer. per-gate scope treats each of the four gate blocks of a
    stacked matrix separately; stacked treats the matrix whole.
    """

    method: str
    rank: int
    target: str = "w_h"
    scope: str = "per-gate"
    layers: tuple[int, ...] | None = None
    nmf: SemiNmfOptions = field(default_factory=SemiNmfOptions)

    def validate(self, n_layers: int) -> tuple[int, ...]:
        if self.method not in METHODS:
            raise ShapeError(f"method must be one of {METHODS}, "
                             f"got {self.method!r}")
        if self.target not in TARGETS:
            raise ShapeError(f"target must be one of {TARGETS}, "
                             f"got {self.target!r}")
        if self.scope not in SCOPES:
            raise ShapeError(f"scope must be one of {SCOPES}, "
                             f"got {self.scope!r}")
        if self.rank < 1:
            raise InvalidRank(f"rank must be >= 1, got {self.rank}")
        layers = tuple(range(n_layers)) if self.layers is None \
            else tuple(self.layers)
        for l in layers:
            if not 0 <= l < n_layers:
                raise ShapeError(f"layer {l} out of range 0..{n_layers - 1}")
        return layers


@dataclass(frozen=True)
class SlotReport:
    """Accounting for one compressed block."""

    layer: int
    target: str
    scope: str
    gate: str                 # "i"/"f"/"o"/"c" per-gate, "all" stacked
    rows: int
    cols: int
    rank: int
    params_before: int
    params_after: int
    recon_error: float        # Frobenius norm of the difference
    negative_savings: bool


@dataclass(frozen=True)
class CompressionReport:
    slots: tuple[SlotReport, ...]
    params_before: dict[str, int]
    params_after: dict[str, int]

    @property
    def any_negative_savings(self) -> bool:
        return any(s.negative_savings for s in self.slots)


def _compress_block(block: np.ndarray, spec: CompressionSpec):
    """Returns (piece, rank_used, params_after) for one block."""
    rows, cols = block.shape
    if spec.method == "prune":
        keep = rank_to_keep_count(rows, cols, spec.rank)
        pruned = prune_magnitude(block, keep)
        return pruned, spec.rank, pruned.kept
    if spec.rank > min(rows, cols):
        raise InvalidRank(f"rank {spec.rank} exceeds min{block.shape} "
                          f"for a {rows}x{cols} block")
    if spec.method == "svd":
        fact = truncated_svd(block, spec.rank)
    else:
        fact, _ = semi_nmf(block, spec.rank, spec.nmf)
    return fact, spec.rank, fact.param_count()


def compress_model(model: LstmLmModel,
                   spec: CompressionSpec) -> tuple[LstmLmModel,
                                                   CompressionReport]:
    """Compressed copy of `model` plus per-block accounting.

    The input model is untouched. Every targeted slot must still be
    dense; re-compressing raises AlreadyCompressed.
    """
    layers = spec.validate(len(model.layers))
    targets = ("w_i", "w_h") if spec.target == "both" else (spec.target,)
    before = model.param_breakdown()

    out = model.copy()
    reports: list[SlotReport] = []
    for l in layers:
        layer = out.layers[l]
        for tgt in targets:
            slot = getattr(layer, tgt)
            if slot.kind != "dense":
                raise AlreadyCompressed(
                    f"layers.{l}.{tgt} is already {slot.kind}")
            dense = slot.w
            rows, cols = dense.shape
            d = rows // 4
            if spec.scope == "per-gate":
                blocks = [(GATES[g], dense[g * d:(g + 1) * d, :])
                          for g in range(4)]
            else:
                blocks = [("all", dense)]

            pieces = []
            pruned_parts = []
            for gate, block in blocks:
                piece, rank_used, p_after = _compress_block(block, spec)
                p_before = block.size
                if spec.method == "prune":
                    err = float(np.linalg.norm(
                        block.astype(np.float64)
                        - piece.w.astype(np.float64)))
                    pruned_parts.append(piece)
                else:
                    err = float(np.linalg.norm(
                        block.astype(np.float64)
                        - piece.u.astype(np.float64)
                        @ piece.v.astype(np.float64)))
                    pieces.append(piece)
                reports.append(SlotReport(
                    layer=l, target=tgt, scope=spec.scope, gate=gate,
                    rows=rows if gate == "all" else d, cols=cols,
                    rank=rank_used, params_before=p_before,
                    params_after=p_after, recon_error=err,
                    negative_savings=p_after >= p_before))

            if spec.method == "prune":
                w = np.concatenate([p.w for p in pruned_parts], axis=0)
                mask = np.concatenate([p.mask for p in pruned_parts], axis=0)
                kept = sum(p.kept for p in pruned_parts)
                new_slot = PrunedSlot(np.ascontiguousarray(w),
                                      np.ascontiguousarray(mask), kept)
            else:
                new_slot = FactorizedSlot(pieces)
            setattr(layer, tgt, new_slot)

    after = out.param_breakdown()
    report = CompressionReport(slots=tuple(reports),
                               params_before=before, params_after=after)
    return out, report
