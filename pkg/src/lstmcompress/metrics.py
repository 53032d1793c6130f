"""Perplexity, compression-efficiency scoring, timing, and norm sweeps."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .compress import CompressionSpec, compress_model
from .errors import DegenerateCompression
from .factorize import SemiNmfOptions
from .linalg import norm_stats
from .model import GATES, LstmLmModel, cross_entropy, lm_forward

__all__ = [
    "CSV_COLUMNS",
    "CSV_COLUMNS_NORMS",
    "BenchResult",
    "EvalResult",
    "ReportRow",
    "bench_inference",
    "efficiency",
    "norm_sweep",
    "perplexity",
    "rows_to_csv",
]


@dataclass(frozen=True)
class EvalResult:
    ppl: float
    token_count: int
    param_count: int


def perplexity(model: LstmLmModel, corpus) -> EvalResult:
    """Exponentiated mean cross-entropy over every target in `corpus`.

    Hidden state threads across windows, so the result does not depend
    on the window length used to batch the stream.
    """
    state = model.init_state(corpus.batch_size)
    total_nll = 0.0
    total_tok = 0
    for inp, tgt in corpus.windows():
        logits, state, _ = lm_forward(model, inp, state)
        loss, count = cross_entropy(logits, tgt)
        total_nll += loss * count
        total_tok += count
    return EvalResult(ppl=float(np.exp(total_nll / total_tok)),
                      token_count=total_tok,
                      param_count=model.param_count())


def efficiency(metric_base: float, metric_compressed: float,
               params_base: float, params_compressed: float, *,
               lower_is_better: bool = True) -> float:
    """Quality loss per unit of parameter saving.

    Both changes are measured as relative differences (a - b) divided
    by the larger of the two values; the metric change keeps its sign,
    so a compressed model that improves the metric scores negative.
    Zero means compression was free.
    """
    values = (metric_base, metric_compressed, params_base, params_compressed)
    if not all(np.isfinite(v) and v > 0 for v in values):
        raise ValueError(f"all inputs must be positive and finite: {values}")
    if params_compressed >= params_base:
        raise DegenerateCompression(
            f"params went from {params_base} to {params_compressed}")

    def rel(a: float, b: float) -> float:
        return (a - b) / max(a, b)

    if lower_is_better:
        num = rel(metric_compressed, metric_base)
    else:
        num = rel(metric_base, metric_compressed)
    return num / rel(params_base, params_compressed)


@dataclass(frozen=True)
class BenchResult:
    """Per-window wall-clock timing, milliseconds, single-threaded."""

    ms_mean: float
    ms_std: float
    ms_median: float
    reps: tuple[float, ...]
    speedup: float | None = None


def bench_inference(model: LstmLmModel, corpus, repetitions: int = 5,
                    warmup: int = 2,
                    baseline_ms: float | None = None) -> BenchResult:
    """Time full forward passes over `corpus`.

    Each repetition walks every window once; its mean ms-per-window is
    one sample. Reported center is the median of those means. BLAS
    pools are pinned to one thread for the duration. With
    `baseline_ms`, speedup = baseline_ms / this median.
    """
    if repetitions < 1 or warmup < 0:
        raise ValueError("need repetitions >= 1 and warmup >= 0")
    n_windows = sum(1 for _ in corpus.windows())

    def one_pass() -> float:
        state = model.init_state(corpus.batch_size)
        started = time.perf_counter()
        for inp, _ in corpus.windows():
            _, state, _ = lm_forward(model, inp, state)
        return (time.perf_counter() - started) * 1000.0 / n_windows

    with threadpool_limits(limits=1):
        for _ in range(warmup):
            one_pass()
        samples = [one_pass() for _ in range(repetitions)]

    median = statistics.median(samples)
    return BenchResult(
        ms_mean=float(np.mean(samples)),
        ms_std=float(np.std(samples)),
        ms_median=float(median),
        reps=tuple(samples),
        speedup=None if baseline_ms is None else baseline_ms / median)


CSV_COLUMNS = ("rank", "method", "target", "scope", "layer", "gate",
               "params_before", "params_after", "l1", "l1_std", "nuclear",
               "ppl", "e_r", "infer_ms_mean", "infer_ms_std")
CSV_COLUMNS_NORMS = CSV_COLUMNS[:11]


@dataclass
class ReportRow:
    """One sweep measurement; eval fields stay None in norms-only runs."""

    rank: str
    method: str
    target: str
    scope: str
    layer: str
    gate: str
    params_before: int
    params_after: int
    l1: float
    l1_std: float
    nuclear: float
    ppl: float | None = None
    e_r: float | None = None
    infer_ms_mean: float | None = None
    infer_ms_std: float | None = None


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".10g")


def rows_to_csv(rows: list[ReportRow], include_eval: bool) -> str:
    """Render rows with the fixed column order; every cell is filled.

    include_eval=False drops the ppl/e_r/timing columns entirely rather
    than leaving holes.
    """
    cols = CSV_COLUMNS if include_eval else CSV_COLUMNS_NORMS
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for col in cols:
            value = getattr(row, col)
            if value is None:
                raise ValueError(f"row missing {col}; use include_eval=False "
                                 "for norms-only sweeps")
            cells.append(_fmt(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _gate_blocks(matrix: np.ndarray, scope: str):
    """(label, row-block) pairs for one stacked weight matrix."""
    if scope == "stacked":
        return [("all", matrix)]
    d = matrix.shape[0] // 4
    return [(GATES[g], matrix[g * d:(g + 1) * d, :]) for g in range(4)]


def _pooled_stats(blocks: list[np.ndarray]):
    """Norms over several blocks: sums for l1/nuclear, std over all
    pooled absolute entries."""
    mags = np.concatenate([np.abs(b.astype(np.float64)).ravel()
                           for b in blocks])
    l1 = float(mags.sum())
    l1_std = float(mags.std())
    nuclear = sum(norm_stats(b).nuclear for b in blocks)
    return l1, l1_std, nuclear


def _model_rows(model: LstmLmModel, rank_label: str, method: str,
                targets, scope: str, layers, *, params_of, ppl=None,
                e_r=None, ms_mean=None, ms_std=None) -> list[ReportRow]:
    """Per-(layer, gate) rows plus a pooled aggregate row per target."""
    rows = []
    shared = dict(ppl=ppl, e_r=e_r, infer_ms_mean=ms_mean,
                  infer_ms_std=ms_std)
    for tgt in targets:
        agg_blocks = []
        agg_before = 0
        agg_after = 0
        for l in layers:
            slot = getattr(model.layers[l], tgt)
            dense = slot.effective()
            for gate, block in _gate_blocks(dense, scope):
                stats = norm_stats(block)
                p_before, p_after = params_of(l, tgt, gate, block)
                rows.append(ReportRow(
                    rank=rank_label, method=method, target=tgt, scope=scope,
                    layer=str(l), gate=gate, params_before=p_before,
                    params_after=p_after, l1=stats.l1, l1_std=stats.l1_std,
                    nuclear=stats.nuclear, **shared))
                agg_blocks.append(block)
                agg_before += p_before
                agg_after += p_after
        l1, l1_std, nuclear = _pooled_stats(agg_blocks)
        rows.append(ReportRow(
            rank=rank_label, method=method, target=tgt, scope=scope,
            layer="all", gate="all", params_before=agg_before,
            params_after=agg_after, l1=l1, l1_std=l1_std, nuclear=nuclear,
            **shared))
    return rows


def norm_sweep(model: LstmLmModel, ranks, methods=("svd",),
               targets=("w_h",), *, scope: str = "per-gate", layers=None,
               eval_corpus=None, repetitions: int = 5, warmup: int = 2,
               nmf: SemiNmfOptions | None = None) -> list[ReportRow]:
    """Compress at every (rank, method, target) and tabulate norms.

    Emits one row per (layer, gate block) plus an aggregate row, and
    baseline rows (rank="full", method="none") for the uncompressed
    matrices. With an eval corpus, each compressed model also gets
    perplexity, efficiency versus the baseline, and single-threaded
    timing; those model-level numbers repeat on each of its rows. A
    compression that fails to shrink the model records efficiency inf.
    """
    if layers is None:
        layers = tuple(range(len(model.layers)))
    nmf = nmf or SemiNmfOptions()
    base_ppl = None
    ms_mean = ms_std = None
    if eval_corpus is not None:
        base = perplexity(model, eval_corpus)
        base_ppl = base.ppl
        bench = bench_inference(model, eval_corpus, repetitions, warmup)
        ms_mean, ms_std = bench.ms_mean, bench.ms_std
    base_params = model.param_count()

    def dense_params(l, tgt, gate, block):
        return block.size, block.size

    rows = _model_rows(model, "full", "none", targets, scope, layers,
                       params_of=dense_params, ppl=base_ppl,
                       e_r=None if base_ppl is None else 0.0,
                       ms_mean=ms_mean, ms_std=ms_std)

    for rank in ranks:
        for method in methods:
            spec = CompressionSpec(method=method, rank=int(rank),
                                   target="both" if len(targets) == 2
                                   else targets[0],
                                   scope=scope, layers=tuple(layers),
                                   nmf=nmf)
            compressed, report = compress_model(model, spec)
            by_block = {(s.layer, s.target, s.gate):
                        (s.params_before, s.params_after)
                        for s in report.slots}

            ppl = e_r = c_mean = c_std = None
            if eval_corpus is not None:
                ppl = perplexity(compressed, eval_corpus).ppl
                try:
                    e_r = efficiency(base_ppl, ppl, base_params,
                                     compressed.param_count())
                except DegenerateCompression:
                    e_r = float("inf")
                cb = bench_inference(compressed, eval_corpus, repetitions,
                                     warmup)
                c_mean, c_std = cb.ms_mean, cb.ms_std

            def block_params(l, tgt, gate, block, _map=by_block):
                return _map[(l, tgt, gate)]

            rows.extend(_model_rows(
                compressed, str(int(rank)), method, targets, scope, layers,
                params_of=block_params, ppl=ppl, e_r=e_r,
                ms_mean=c_mean, ms_std=c_std))
    return rows
