"""Tabulate weight-matrix norms across a compression grid.

Produces the same CSV the `lstmcompress sweep --no-eval` command
writes: one row per (layer, gate block) and a pooled aggregate row,
for the uncompressed model and for every (rank, method) grid point.
Run with:

    python3 demos/03_norm_sweep.py
"""

from lstmcompress import (LmConfig, LstmLmModel, build_vocab, norm_sweep,
                          rows_to_csv, sample_text)

vocab = build_vocab(sample_text(5_000, seed=0), "char")
model = LstmLmModel.build(
    vocab, LmConfig(n_emb=32, n_dim=32, n_layers=2, dropout=0.0), seed=0)

rows = norm_sweep(model, ranks=(4, 16, 32), methods=("svd", "prune"),
                  targets=("w_h",), scope="per-gate")
csv_text = rows_to_csv(rows, include_eval=False)
print(csv_text)

# A few things worth noticing in the table:
#  * rank 32 is full rank for the 32x32 gate blocks, so the svd rows
#    reproduce the baseline norms and params_after exceeds
#    params_before (the pair stores more than the block).
#  * pruning rows never raise l1: dropping entries only removes mass.
#  * nuclear for a rank-r svd row is the sum of the top r singular
#    values of the corresponding baseline block.
base = {(r.layer, r.gate): r for r in rows if r.method == "none"}
for r in rows:
    if r.method == "prune" and r.gate != "all":
        assert r.l1 <= base[(r.layer, r.gate)].l1
print("checked: pruning never increases l1")
