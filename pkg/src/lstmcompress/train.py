"""SGD training with truncated backprop through time."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import DivergedError
from .linalg import derive_seed
from .metrics import perplexity
from .model import LstmLmModel, backward_from_cache, cross_entropy, lm_forward

__all__ = [
    "TrainerConfig",
    "bptt_step",
    "compute_gradients",
    "finetune",
    "sgd_step",
    "train_model",
]


@dataclass(frozen=True)
class TrainerConfig:
    """Plain SGD with a global gradient-norm clip."""

    lr: float = 1.0
    clip: float = 0.25
    seed: int = 0


def compute_gradients(model: LstmLmModel, inputs, targets, state, *,
                      rng=None, masks=None):
    """Forward + backward over one window without touching the weights.

    Returns (mean_loss, grads, new_state). Gradients cover exactly the
    trainable entries; pruned-away weights report zero.
    """
    logits, new_state, cache = lm_forward(
        model, inputs, state, train=True, rng=rng, masks=masks,
        want_cache=True)
    loss, _ = cross_entropy(logits, targets)
    grads = backward_from_cache(model, cache, logits, targets)
    return loss, grads, new_state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return float(total)


def sgd_step(model: LstmLmModel, grads: dict[str, np.ndarray],
             lr: float) -> None:
    for name, arr, _ in model.parameters():
        arr -= (lr * grads[name]).astype(arr.dtype, copy=False)


def bptt_step(model: LstmLmModel, inputs, targets, state,
              cfg: TrainerConfig, rng=None, *, epoch=None, step=None):
    """One clipped SGD update on one window; returns (loss, new_state).

    The returned state is detached, ready for the next window. A
    non-finite loss raises DivergedError carrying epoch/step.
    """
    loss, grads, new_state = compute_gradients(
        model, inputs, targets, state, rng=rng)
    if not np.isfinite(loss):
        raise DivergedError(f"loss became {loss}", epoch=epoch, step=step)
    clip_gradients(grads, cfg.clip)
    sgd_step(model, grads, cfg.lr)
    return loss, new_state


def train_model(model: LstmLmModel, train_corpus, valid_corpus, epochs: int,
                cfg: TrainerConfig, on_epoch=None):
    """Train in place for `epochs` passes over `train_corpus`.

    Hidden state threads across windows and resets at epoch boundaries.
    Validation perplexity is measured after every epoch; the best
    snapshot is kept and returned alongside the per-epoch history
    (epoch, train_ppl, valid_ppl, lr, seconds). The caller's model
    object ends up holding the final-epoch weights.
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, 0x0D0))
    history: list[dict] = []
    best_ppl = np.inf
    best_model = None
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        state = model.init_state(train_corpus.batch_size)
        total_nll = 0.0
        total_tok = 0
        for step, (inp, tgt) in enumerate(train_corpus.windows()):
            loss, state = bptt_step(model, inp, tgt, state, cfg, rng,
                                    epoch=epoch, step=step)
            total_nll += loss * tgt.size
            total_tok += tgt.size
        valid_ppl = perplexity(model, valid_corpus).ppl
        record = {
            "epoch": epoch,
            "train_ppl": float(np.exp(total_nll / total_tok)),
            "valid_ppl": valid_ppl,
            "lr": cfg.lr,
            "seconds": time.perf_counter() - started,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if valid_ppl < best_ppl:
            best_ppl = valid_ppl
            best_model = model.copy()
    return (best_model if best_model is not None else model), history


def finetune(model: LstmLmModel, train_corpus, valid_corpus, epochs: int,
             cfg: TrainerConfig, on_epoch=None):
    """Continue training a (typically compressed) model.

    Returns (best_model, history) where the candidate set includes the
    incoming model itself, so the result never validates worse than
    what went in. epochs=0 returns the model untouched.
    """
    if epochs == 0:
        return model, []
    start_ppl = perplexity(model, valid_corpus).ppl
    snapshot = model.copy()
    best_model, history = train_model(model, train_corpus, valid_corpus,
                                      epochs, cfg, on_epoch=on_epoch)
    best_trained = min(h["valid_ppl"] for h in history)
    if start_ppl <= best_trained:
        return snapshot, history
    return best_model, history
