"""Stacked LSTM language model over swappable weight slots.

Each recurrence matrix lives in a "slot" that is either dense, a
low-rank (u, v) pair applied as u @ (v @ x), or a magnitude-pruned
dense matrix with a frozen mask. The forward pass, the truncated
backprop-through-time gradients, and the flop accounting all go
through the slot interface, so compressed and dense models share one
code path.

Gate blocks are stacked in the order input, forget, output, candidate
along the rows of the 4d x n weight matrices.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, VocabError
from .factorize import FactorizedMatrix
from .linalg import derive_seed, prng_matrix

GATES = ("i", "f", "o", "c")

__all__ = [
    "GATES",
    "DenseSlot",
    "FactorizedSlot",
    "PrunedSlot",
    "LstmLayer",
    "LmConfig",
    "LstmLmModel",
    "cell_forward",
    "count_flops",
    "cross_entropy",
    "lm_forward",
]


class _FlopCounter:
    """Multiply-add counter for slot applications, off by default."""

    def __init__(self):
        self.active = False
        self.total = 0


FLOPS = _FlopCounter()


@contextmanager
def count_flops():
    """Count slot multiply-adds inside the block; yields the counter."""
    FLOPS.total = 0
    FLOPS.active = True
    try:
        yield FLOPS
    finally:
        FLOPS.active = False


class DenseSlot:
    """Plain dense weight matrix."""

    kind = "dense"

    def __init__(self, w: np.ndarray):
        self.w = w

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        if FLOPS.active:
            FLOPS.total += x.shape[0] * self.w.size
        return x @ self.w.T

    def backward(self, x, delta, grads, prefix):
        grads[prefix + ".w"] += delta.T @ x
        return delta @ self.w

    def params(self, prefix):
        yield prefix + ".w", self.w, None

    def param_count(self) -> int:
        return self.w.size

    def effective(self) -> np.ndarray:
        return self.w

    def copy(self) -> "DenseSlot":
        return DenseSlot(self.w.copy())


class FactorizedSlot:
    """Vertical stack of low-rank blocks standing in for one matrix.

    One block covers the whole matrix (stacked scope) or each of the
    four gate blocks gets its own pair (per-gate scope). u @ v is never
    materialized on the forward path.
    """

    kind = "factorized"

    def __init__(self, parts: list[FactorizedMatrix]):
        if not parts:
            raise ShapeError("factorized slot needs at least one block")
        cols = {p.shape[1] for p in parts}
        if len(cols) != 1:
            raise ShapeError(f"blocks disagree on input width: {cols}")
        self.parts = parts
        self._slices = []
        row = 0
        for p in parts:
            self._slices.append(slice(row, row + p.shape[0]))
            row += p.shape[0]
        self._rows = row

    @property
    def shape(self) -> tuple[int, int]:
        return (self._rows, self.parts[0].shape[1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        if FLOPS.active:
            n = self.shape[1]
            FLOPS.total += x.shape[0] * sum(
                p.rank * (p.shape[0] + n) for p in self.parts)
        outs = [(x @ p.v.T) @ p.u.T for p in self.parts]
        return outs[0] if len(outs) == 1 else np.concatenate(outs, axis=1)

    def backward(self, x, delta, grads, prefix):
        dx = None
        for k, (p, sl) in enumerate(zip(self.parts, self._slices)):
            d = delta[:, sl]
            t = d @ p.u                       # (batch, r)
            z = x @ p.v.T                     # (batch, r)
            grads[f"{prefix}.part{k}.u"] += d.T @ z
            grads[f"{prefix}.part{k}.v"] += t.T @ x
            dx = t @ p.v if dx is None else dx + t @ p.v
        return dx

    def params(self, prefix):
        for k, p in enumerate(self.parts):
            yield f"{prefix}.part{k}.u", p.u, None
            yield f"{prefix}.part{k}.v", p.v, None

    def param_count(self) -> int:
        return sum(p.param_count() for p in self.parts)

    def effective(self) -> np.ndarray:
        dense = [p.u.astype(np.float64) @ p.v.astype(np.float64)
                 for p in self.parts]
        return np.concatenate(dense, axis=0).astype(self.parts[0].u.dtype)

    def copy(self) -> "FactorizedSlot":
        return FactorizedSlot(
            [FactorizedMatrix(u=p.u.copy(), v=p.v.copy())
             for p in self.parts])


class PrunedSlot:
    """Dense matrix with a frozen zero mask; masked entries stay zero."""

    kind = "pruned"

    def __init__(self, w: np.ndarray, mask: np.ndarray, kept: int):
        if w.shape != mask.shape:
            raise ShapeError(f"mask shape {mask.shape} != weights {w.shape}")
        self.w = w
        self.mask = mask
        self.kept = kept

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        if FLOPS.active:
            FLOPS.total += x.shape[0] * self.w.size
        return x @ self.w.T

    def backward(self, x, delta, grads, prefix):
        # masking happens once per step, after accumulation
        grads[prefix + ".w"] += delta.T @ x
        return delta @ self.w

    def params(self, prefix):
        yield prefix + ".w", self.w, self.mask

    def param_count(self) -> int:
        return self.kept

    def effective(self) -> np.ndarray:
        return self.w

    def copy(self) -> "PrunedSlot":
        return PrunedSlot(self.w.copy(), self.mask.copy(), self.kept)


class LstmLayer:
    """One LSTM layer: stacked input and recurrent slots plus bias."""

    def __init__(self, w_i, w_h, bias: np.ndarray):
        rows = w_i.shape[0]
        if rows % 4 or w_h.shape[0] != rows or bias.shape != (rows,):
            raise ShapeError(
                f"gate rows mismatch: w_i {w_i.shape}, w_h {w_h.shape}, "
                f"bias {bias.shape}")
        if w_h.shape[1] * 4 != rows:
            raise ShapeError(f"w_h must be square per gate, got {w_h.shape}")
        self.w_i = w_i
        self.w_h = w_h
        self.bias = bias

    @property
    def n_dim(self) -> int:
        return self.w_h.shape[1]

    @property
    def n_inp(self) -> int:
        return self.w_i.shape[1]

    def copy(self) -> "LstmLayer":
        return LstmLayer(self.w_i.copy(), self.w_h.copy(), self.bias.copy())


@dataclass(frozen=True)
class LmConfig:
    """Architecture knobs; dropout acts between LSTM layers only."""

    n_emb: int
    n_dim: int
    n_layers: int
    tied: bool = False
    dropout: float = 0.2

    def validate(self) -> None:
        if min(self.n_emb, self.n_dim, self.n_layers) < 1:
            raise ShapeError(f"model dims must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ShapeError(f"dropout must be in [0, 1): {self.dropout}")
        if self.tied and self.n_emb != self.n_dim:
            raise ShapeError("tied embeddings need n_emb == n_dim, got "
                             f"{self.n_emb} != {self.n_dim}")


class LstmLmModel:
    """Embedding -> stacked LSTM layers -> linear decoder."""

    def __init__(self, vocab, config: LmConfig, embedding, layers,
                 decoder_w, decoder_b):
        config.validate()
        self.vocab = vocab
        self.config = config
        self.embedding = embedding
        self.layers = layers
        self.decoder_w = decoder_w    # None when tied
        self.decoder_b = decoder_b

    @classmethod
    def build(cls, vocab, config: LmConfig, seed: int = 0,
              dtype=np.float32) -> "LstmLmModel":
        """Fresh model, weights uniform within +-1/sqrt(n_dim).

        Every array gets its own derived seed, so the full weight set
        is a pure function of (vocab, config, seed). Forget-gate biases
        start at one, everything else at zero.
        """
        config.validate()
        scale = 1.0 / np.sqrt(config.n_dim)
        stream = iter(range(1000))

        def draw(rows, cols):
            m = prng_matrix(rows, cols, derive_seed(seed, next(stream)),
                            scale)
            return m.astype(dtype, copy=False)

        v = vocab.size
        embedding = draw(v, config.n_emb)
        layers = []
        for l in range(config.n_layers):
            n_inp = config.n_emb if l == 0 else config.n_dim
            w_i = DenseSlot(draw(4 * config.n_dim, n_inp))
            w_h = DenseSlot(draw(4 * config.n_dim, config.n_dim))
            bias = np.zeros(4 * config.n_dim, dtype=dtype)
            bias[config.n_dim:2 * config.n_dim] = 1.0   # forget gate open
            layers.append(LstmLayer(w_i, w_h, bias))
        decoder_w = None if config.tied else draw(config.n_dim, v)
        decoder_b = np.zeros(v, dtype=dtype)
        return cls(vocab, config, embedding, layers, decoder_w, decoder_b)

    @property
    def dtype(self):
        return self.embedding.dtype

    def decoder_matrix(self) -> np.ndarray:
        return self.embedding.T if self.config.tied else self.decoder_w

    def parameters(self):
        """Yield (name, array, mask-or-None) in a fixed order."""
        yield "embedding", self.embedding, None
        for l, layer in enumerate(self.layers):
            yield from layer.w_i.params(f"layers.{l}.w_i")
            yield from layer.w_h.params(f"layers.{l}.w_h")
            yield f"layers.{l}.bias", layer.bias, None
        if not self.config.tied:
            yield "decoder.w", self.decoder_w, None
        yield "decoder.b", self.decoder_b, None

    def param_count(self) -> int:
        return self.param_breakdown()["total"]

    def param_breakdown(self) -> dict[str, int]:
        """Itemized trainable-parameter counts; pruned slots count only
        surviving entries, factorized slots count u and v."""
        emb = self.embedding.size
        lstm = sum(layer.w_i.param_count() + layer.w_h.param_count()
                   + layer.bias.size for layer in self.layers)
        dec = self.decoder_b.size
        if not self.config.tied:
            dec += self.decoder_w.size
        return {"embedding": emb, "lstm": lstm, "decoder": dec,
                "total": emb + lstm + dec}

    def init_state(self, batch_size: int):
        if batch_size < 1:
            raise ShapeError(f"batch_size must be >= 1, got {batch_size}")
        d = self.config.n_dim
        return [(np.zeros((batch_size, d), dtype=self.dtype),
                 np.zeros((batch_size, d), dtype=self.dtype))
                for _ in self.layers]

    def copy(self) -> "LstmLmModel":
        return LstmLmModel(
            self.vocab, self.config, self.embedding.copy(),
            [layer.copy() for layer in self.layers],
            None if self.decoder_w is None else self.decoder_w.copy(),
            self.decoder_b.copy())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _cell(layer: LstmLayer, x, h_prev, c_prev):
    d = layer.n_dim
    a = layer.w_i.apply(x) + layer.w_h.apply(h_prev) + layer.bias
    i = _sigmoid(a[:, :d])
    f = _sigmoid(a[:, d:2 * d])
    o = _sigmoid(a[:, 2 * d:3 * d])
    chat = np.tanh(a[:, 3 * d:])
    c = f * c_prev + i * chat
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, chat, tc)


def cell_forward(layer: LstmLayer, x, state):
    """One LSTM cell step; x is a vector or a (batch, n_inp) matrix.

    Returns the new (h, c) with the same leading shape as the inputs.
    """
    h_prev, c_prev = state
    x = np.asarray(x)
    h_prev = np.asarray(h_prev)
    c_prev = np.asarray(c_prev)
    single = x.ndim == 1
    if single:
        x, h_prev, c_prev = x[None, :], h_prev[None, :], c_prev[None, :]
    if x.ndim != 2 or h_prev.shape != c_prev.shape:
        raise ShapeError("x and state must be vectors or aligned matrices")
    if x.shape[1] != layer.n_inp or h_prev.shape != (x.shape[0], layer.n_dim):
        raise ShapeError(
            f"expected x (*, {layer.n_inp}) and state (*, {layer.n_dim}); "
            f"got x {x.shape}, h {h_prev.shape}")
    h, c, _ = _cell(layer, x, h_prev, c_prev)
    if single:
        return h[0], c[0]
    return h, c


class _ForwardCache:
    """Everything backward needs, kept per (step, layer)."""

    def __init__(self, ids, steps, n_layers):
        self.ids = ids
        self.cells = [[None] * n_layers for _ in range(steps)]
        self.masks = [[None] * n_layers for _ in range(steps)]
        self.hs_top = None


def _check_state(model, state, batch):
    if len(state) != len(model.layers):
        raise ShapeError(f"state has {len(state)} layers, model has "
                         f"{len(model.layers)}")
    d = model.config.n_dim
    for h, c in state:
        if h.shape != (batch, d) or c.shape != (batch, d):
            raise ShapeError(f"state arrays must be ({batch}, {d}); got "
                             f"{h.shape} and {c.shape}")


def lm_forward(model: LstmLmModel, ids, state=None, *, train: bool = False,
               rng: np.random.Generator | None = None, masks=None,
               want_cache: bool = False):
    """Run the model over a (batch, steps) id window.

    Returns (logits, new_state, cache); the new state is detached
    copies of the last step. In training mode with nonzero dropout,
    fresh inter-layer masks come from `rng` unless `masks` (indexed
    [step][layer]) is supplied.
    """
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.size == 0:
        raise ShapeError(f"ids must be (batch, steps), got {ids.shape}")
    if ids.min() < 0 or ids.max() >= model.vocab.size:
        raise VocabError("token id out of vocabulary range")
    batch, steps = ids.shape
    if state is None:
        state = model.init_state(batch)
    _check_state(model, state, batch)

    p = model.config.dropout if train else 0.0
    if p > 0.0 and rng is None and masks is None:
        raise ShapeError("training forward with dropout needs rng or masks")

    n_layers = len(model.layers)
    d = model.config.n_dim
    cache = _ForwardCache(ids, steps, n_layers) if want_cache else None
    hs = [h for h, _ in state]
    cs = [c for _, c in state]
    emb = model.embedding[ids]                      # (batch, steps, n_emb)
    hs_top = np.empty((batch, steps, d), dtype=model.dtype)
    keep = np.float64(1.0 - p)

    for t in range(steps):
        x = emb[:, t]
        for l, layer in enumerate(model.layers):
            if l > 0 and p > 0.0:
                if masks is not None:
                    mask = masks[t][l]
                else:
                    mask = (rng.random((batch, d)) >= p) / keep
                    mask = mask.astype(model.dtype)
                x = x * mask
            else:
                mask = None
            h_prev, c_prev = hs[l], cs[l]
            h, c, gates = _cell(layer, x, h_prev, c_prev)
            if cache is not None:
                cache.cells[t][l] = (x, h_prev, c_prev) + gates
                cache.masks[t][l] = mask
            hs[l], cs[l] = h, c
            x = h
        hs_top[:, t] = x

    dec_w = model.decoder_matrix()
    logits = hs_top.reshape(batch * steps, d) @ dec_w + model.decoder_b
    logits = logits.reshape(batch, steps, -1)
    if cache is not None:
        cache.hs_top = hs_top
    new_state = [(hs[l].copy(), cs[l].copy()) for l in range(n_layers)]
    return logits, new_state, cache


def cross_entropy(logits, targets) -> tuple[float, int]:
    """Mean negative log-likelihood over every target token.

    logits has one trailing vocabulary axis; targets matches the
    leading axes. Sums in float64 and returns (mean_loss, n_tokens).
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets "
                         f"{targets.shape}")
    if targets.size == 0:
        raise ShapeError("no target tokens")
    flat = logits.reshape(-1, logits.shape[-1])
    tgt = targets.reshape(-1)
    if tgt.min() < 0 or tgt.max() >= flat.shape[1]:
        raise VocabError("target id out of vocabulary range")
    m = flat.max(axis=1)
    with np.errstate(over="ignore"):
        lse = m + np.log(np.exp(flat - m[:, None]).sum(axis=1))
    picked = flat[np.arange(flat.shape[0]), tgt]
    total = np.sum((lse - picked).astype(np.float64))
    return float(total / tgt.size), int(tgt.size)


def backward_from_cache(model: LstmLmModel, cache: _ForwardCache,
                        logits, targets) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy for the cached window.

    Buffers accumulate in float64 whatever the model dtype; pruned
    slots get their masked entries zeroed at the end.
    """
    ids = cache.ids
    batch, steps = ids.shape
    d = model.config.n_dim
    n_tok = batch * steps

    grads: dict[str, np.ndarray] = {
        name: np.zeros(arr.shape, dtype=np.float64)
        for name, arr, _ in model.parameters()}

    flat = logits.reshape(n_tok, -1)
    m = flat.max(axis=1, keepdims=True)
    with np.errstate(over="ignore"):
        e = np.exp(flat - m)
    probs = e / e.sum(axis=1, keepdims=True)
    probs[np.arange(n_tok), targets.reshape(-1)] -= 1.0
    dlogits = (probs / n_tok).astype(model.dtype)

    hs_flat = cache.hs_top.reshape(n_tok, d)
    if model.config.tied:
        grads["embedding"] += dlogits.T @ hs_flat
    else:
        grads["decoder.w"] += hs_flat.T @ dlogits
    grads["decoder.b"] += dlogits.sum(axis=0)
    dh_top = (dlogits @ model.decoder_matrix().T).reshape(batch, steps, d)

    zero = np.zeros((batch, d), dtype=model.dtype)
    dh_next = [zero] * len(model.layers)
    dc_next = [zero] * len(model.layers)

    for t in range(steps - 1, -1, -1):
        dx_above = dh_top[:, t]
        for l in range(len(model.layers) - 1, -1, -1):
            layer = model.layers[l]
            x, h_prev, c_prev, i, f, o, chat, tc = cache.cells[t][l]
            dh = dx_above + dh_next[l]
            do = dh * tc
            dc = dc_next[l] + dh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * chat * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                do * o * (1.0 - o),
                dc * i * (1.0 - chat * chat)], axis=1)
            grads[f"layers.{l}.bias"] += da.sum(axis=0)
            dx = layer.w_i.backward(x, da, grads, f"layers.{l}.w_i")
            dh_next[l] = layer.w_h.backward(h_prev, da, grads,
                                            f"layers.{l}.w_h")
            dc_next[l] = dc * f
            mask = cache.masks[t][l]
            if mask is not None:
                dx = dx * mask
            dx_above = dx
        np.add.at(grads["embedding"], ids[:, t], dx_above)

    for name, _, mask in model.parameters():
        if mask is not None:
            grads[name] *= mask
    return grads
