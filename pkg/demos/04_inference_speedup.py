"""Measure the wall-clock payoff of low-rank inference.

Two experiments, both pinned to one BLAS thread: a bare matrix-vector
product at 1024x1024, and a whole 2-layer model before and after
factorizing its recurrence and input matrices. Run with:

    python3 demos/04_inference_speedup.py
"""

import time

import numpy as np
from threadpoolctl import threadpool_limits

from lstmcompress import (CompressionSpec, DenseSlot, FactorizedSlot,
                          LmConfig, LstmLmModel, batchify, bench_inference,
                          build_vocab, compress_model, count_flops,
                          prng_matrix, sample_text, truncated_svd)

# --- single matrix-vector product ---------------------------------
n = 1024
rank = 64
w = prng_matrix(n, n, seed=3)
x = prng_matrix(1, n, seed=4)
dense = DenseSlot(w)
fact = FactorizedSlot([truncated_svd(w, rank)])

with count_flops() as fc:
    dense.apply(x)
dense_flops = fc.total
with count_flops() as fc:
    fact.apply(x)
fact_flops = fc.total
print(f"multiply-adds per vector: dense {dense_flops}, "
      f"rank-{rank} {fact_flops} "
      f"({dense_flops / fact_flops:.1f}x fewer)")


def median_ms(slot, inner=300, reps=5):
    samples = []
    with threadpool_limits(limits=1):
        slot.apply(x)                       # warm the caches
        for _ in range(reps):
            t0 = time.perf_counter()
            for _ in range(inner):
                slot.apply(x)
            samples.append((time.perf_counter() - t0) * 1e3 / inner)
    return float(np.median(samples))


d_ms, f_ms = median_ms(dense), median_ms(fact)
print(f"measured: dense {d_ms * 1e3:.1f} us, factorized {f_ms * 1e3:.1f} us"
      f" -> {d_ms / f_ms:.1f}x faster\n")

# --- whole model ---------------------------------------------------
vocab = build_vocab(sample_text(5_000, seed=0), "char")
model = LstmLmModel.build(
    vocab, LmConfig(n_emb=512, n_dim=512, n_layers=2, dropout=0.0), seed=1)
comp, report = compress_model(
    model, CompressionSpec(method="svd", rank=64, target="both",
                           scope="per-gate"))
corpus = batchify(vocab.encode(sample_text(15_000, seed=9)), 32, 64)

base = bench_inference(model, corpus, repetitions=5, warmup=1)
cand = bench_inference(comp, corpus, repetitions=5, warmup=1,
                       baseline_ms=base.ms_median)
print(f"2-layer 512-dim model, rank-64 factors on w_i and w_h:")
print(f"  params  {report.params_before['total']} -> "
      f"{report.params_after['total']}")
print(f"  ms/window  dense {base.ms_median:.2f} -> "
      f"compressed {cand.ms_median:.2f}  ({cand.speedup:.2f}x)")
