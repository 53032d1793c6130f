"""On-disk model format: <dir>/manifest.json + <dir>/weights.bin.

The manifest is minified JSON with sorted keys; the blob is raw
little-endian float32 in row-major order, one array after another at
the offsets the manifest declares. Pruning masks are bit-packed.
Saving a freshly loaded model reproduces both files byte for byte.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .errors import FormatError
from .factorize import FactorizedMatrix
from .model import (DenseSlot, FactorizedSlot, LmConfig, LstmLayer,
                    LstmLmModel, PrunedSlot)

FORMAT_VERSION = 1

__all__ = ["FORMAT_VERSION", "load_checkpoint", "save_checkpoint"]

_MODEL_KEYS = {"n_emb", "n_dim", "n_layers", "tied", "dropout"}
_TOP_KEYS = {"format_version", "model", "vocab", "slots", "arrays"}


def _slot_arrays(name: str, slot):
    """(array_name, ndarray, dtype_tag) triples for one slot, in order."""
    if slot.kind == "dense":
        yield f"{name}.w", slot.w, "f4"
    elif slot.kind == "factorized":
        for k, p in enumerate(slot.parts):
            yield f"{name}.part{k}.u", p.u, "f4"
            yield f"{name}.part{k}.v", p.v, "f4"
    else:
        yield f"{name}.w", slot.w, "f4"
        yield f"{name}.mask", slot.mask, "bitmask"


def _slot_entry(name: str, slot) -> dict:
    if slot.kind == "dense":
        return {"name": name, "kind": "dense"}
    if slot.kind == "factorized":
        return {"name": name, "kind": "factorized",
                "parts": [{"rows": int(p.shape[0]), "rank": int(p.rank)}
                          for p in slot.parts]}
    return {"name": name, "kind": "pruned", "kept": int(slot.kept)}


def _walk_model(model: LstmLmModel):
    """All persisted arrays in their canonical order."""
    yield "embedding", model.embedding, "f4"
    for l, layer in enumerate(model.layers):
        yield from _slot_arrays(f"layers.{l}.w_i", layer.w_i)
        yield from _slot_arrays(f"layers.{l}.w_h", layer.w_h)
        yield f"layers.{l}.bias", layer.bias, "f4"
    if not model.config.tied:
        yield "decoder.w", model.decoder_w, "f4"
    yield "decoder.b", model.decoder_b, "f4"


def _nbytes(shape, dtype_tag: str) -> int:
    count = int(np.prod(shape))
    if dtype_tag == "f4":
        return 4 * count
    if dtype_tag == "bitmask":
        return math.ceil(count / 8)
    raise FormatError(f"unknown dtype tag {dtype_tag!r}")


def save_checkpoint(model: LstmLmModel, path) -> None:
    """Write the model into directory `path`, creating it if needed."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    arrays = []
    blob = bytearray()
    for name, arr, tag in _walk_model(model):
        if tag == "f4":
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        else:
            raw = np.packbits(arr.ravel().astype(bool)).tobytes()
        arrays.append({"name": name, "shape": [int(s) for s in arr.shape],
                       "dtype": tag, "offset": len(blob)})
        blob.extend(raw)

    cfg = model.config
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": {"n_emb": cfg.n_emb, "n_dim": cfg.n_dim,
                  "n_layers": cfg.n_layers, "tied": cfg.tied,
                  "dropout": cfg.dropout},
        "vocab": {"mode": model.vocab.mode,
                  "tokens": list(model.vocab.id_to_token)},
        "slots": [_slot_entry(f"layers.{l}.{tgt}",
                              getattr(layer, tgt))
                  for l, layer in enumerate(model.layers)
                  for tgt in ("w_i", "w_h")],
        "arrays": arrays,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")),
        encoding="utf-8")
    (out / "weights.bin").write_bytes(bytes(blob))


def _check_keys(entry: dict, allowed: set[str], context: str) -> None:
    keys = set(entry)
    if keys != allowed:
        extra = keys - allowed
        missing = allowed - keys
        parts = []
        if extra:
            parts.append(f"unknown keys {sorted(extra)}")
        if missing:
            parts.append(f"missing keys {sorted(missing)}")
        raise FormatError(f"{context}: " + ", ".join(parts))


def _read_manifest(path: Path) -> dict:
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read manifest: {exc}") from exc
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object")
    _check_keys(manifest, _TOP_KEYS, "manifest")
    if manifest["format_version"] != FORMAT_VERSION:
        raise FormatError(
            f"format_version {manifest['format_version']!r} unsupported; "
            f"this build reads version {FORMAT_VERSION}")
    _check_keys(manifest["model"], _MODEL_KEYS, "manifest.model")
    _check_keys(manifest["vocab"], {"mode", "tokens"}, "manifest.vocab")
    for entry in manifest["arrays"]:
        _check_keys(entry, {"name", "shape", "dtype", "offset"},
                    f"array entry {entry.get('name')!r}")
    for entry in manifest["slots"]:
        kind = entry.get("kind")
        if kind == "dense":
            _check_keys(entry, {"name", "kind"}, "dense slot")
        elif kind == "factorized":
            _check_keys(entry, {"name", "kind", "parts"}, "factorized slot")
            for p in entry["parts"]:
                _check_keys(p, {"rows", "rank"}, "factorized part")
        elif kind == "pruned":
            _check_keys(entry, {"name", "kind", "kept"}, "pruned slot")
        else:
            raise FormatError(f"unknown slot kind {kind!r}")
    return manifest


def load_checkpoint(path) -> LstmLmModel:
    """Rebuild a model from directory `path`.

    Rejects version mismatches, unknown or missing manifest keys,
    overlapping or out-of-order offsets, and a weight blob whose size
    disagrees with the manifest.
    """
    root = Path(path)
    manifest = _read_manifest(root / "manifest.json")

    expected = 0
    for entry in manifest["arrays"]:
        if entry["offset"] != expected:
            raise FormatError(
                f"array {entry['name']!r} at offset {entry['offset']}, "
                f"expected {expected}")
        expected += _nbytes(entry["shape"], entry["dtype"])
    try:
        blob = (root / "weights.bin").read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weights: {exc}") from exc
    if len(blob) != expected:
        raise FormatError(f"weights.bin holds {len(blob)} bytes, manifest "
                          f"declares {expected}")

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start = entry["offset"]
        if entry["dtype"] == "f4":
            arr = np.frombuffer(blob, dtype="<f4", count=count,
                                offset=start).reshape(shape)
            # frombuffer views are read-only; training needs writable arrays
            arrays[entry["name"]] = np.array(arr, dtype=np.float32)
        else:
            nbytes = _nbytes(shape, "bitmask")
            packed = np.frombuffer(blob, dtype=np.uint8, count=nbytes,
                                   offset=start)
            bits = np.unpackbits(packed, count=count)
            arrays[entry["name"]] = bits.reshape(shape).astype(bool)

    def take(name: str) -> np.ndarray:
        if name not in arrays:
            raise FormatError(f"manifest lists no array {name!r}")
        return arrays.pop(name)

    cfg = LmConfig(**manifest["model"])
    vocab = Vocabulary(id_to_token=list(manifest["vocab"]["tokens"]),
                       mode=manifest["vocab"]["mode"])

    slot_entries = {e["name"]: e for e in manifest["slots"]}
    expected_slots = {f"layers.{l}.{tgt}" for l in range(cfg.n_layers)
                      for tgt in ("w_i", "w_h")}
    if set(slot_entries) != expected_slots:
        raise FormatError(f"slot list {sorted(slot_entries)} does not match "
                          f"a {cfg.n_layers}-layer model")

    def build_slot(name: str):
        entry = slot_entries[name]
        if entry["kind"] == "dense":
            return DenseSlot(take(f"{name}.w"))
        if entry["kind"] == "factorized":
            parts = []
            for k, meta in enumerate(entry["parts"]):
                u = take(f"{name}.part{k}.u")
                v = take(f"{name}.part{k}.v")
                if u.shape != (meta["rows"], meta["rank"]) or \
                        v.shape[0] != meta["rank"]:
                    raise FormatError(f"{name}.part{k} shapes {u.shape}/"
                                      f"{v.shape} disagree with manifest")
                parts.append(FactorizedMatrix(u=u, v=v))
            return FactorizedSlot(parts)
        w = take(f"{name}.w")
        mask = take(f"{name}.mask")
        if int(mask.sum()) != entry["kept"]:
            raise FormatError(f"{name}: mask keeps {int(mask.sum())} "
                              f"entries, manifest says {entry['kept']}")
        return PrunedSlot(w, mask, entry["kept"])

    embedding = take("embedding")
    layers = []
    for l in range(cfg.n_layers):
        w_i = build_slot(f"layers.{l}.w_i")
        w_h = build_slot(f"layers.{l}.w_h")
        bias = take(f"layers.{l}.bias")
        layers.append(LstmLayer(w_i, w_h, bias))
    decoder_w = None if cfg.tied else take("decoder.w")
    decoder_b = take("decoder.b")
    if arrays:
        raise FormatError(f"manifest declares unused arrays "
                          f"{sorted(arrays)}")

    if embedding.shape != (vocab.size, cfg.n_emb):
        raise FormatError(f"embedding shape {embedding.shape} disagrees "
                          f"with vocab {vocab.size} x n_emb {cfg.n_emb}")
    return LstmLmModel(vocab, cfg, embedding, layers, decoder_w, decoder_b)
