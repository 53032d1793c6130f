"""Train a small character model, compress it, recover the quality.

The whole loop: synthesize a corpus, train a 2-layer LSTM, replace the
recurrence matrices with rank-8 factors (or an equivalent pruning
budget), then finetune to claw back the perplexity. Takes well under a
minute. Run with:

    python3 demos/02_train_and_compress.py
"""

from lstmcompress import (CompressionSpec, LmConfig, LstmLmModel,
                          TrainerConfig, batchify, build_vocab,
                          compress_model, finetune, perplexity,
                          sample_text, train_model)

text = sample_text(120_000, seed=1)
cut = int(len(text) * 0.9)
vocab = build_vocab(text[:cut], "char")
train_bc = batchify(vocab.encode(text[:cut]), 32, 64)
valid_bc = batchify(vocab.encode(text[cut:]), 32, 64)
print(f"corpus: {len(text)} chars, vocab {vocab.size}, "
      f"{train_bc.token_count} training targets")

model = LstmLmModel.build(
    vocab, LmConfig(n_emb=48, n_dim=48, n_layers=2, dropout=0.2), seed=0)
trainer = TrainerConfig(lr=1.0, clip=0.25, seed=0)

print("\ntraining 3 epochs:")
model, history = train_model(
    model, train_bc, valid_bc, 3, trainer,
    on_epoch=lambda r: print(f"  epoch {r['epoch']}: "
                             f"valid_ppl={r['valid_ppl']:.2f} "
                             f"({r['seconds']:.1f}s)"))
base_ppl = perplexity(model, valid_bc).ppl
base_params = model.param_count()
print(f"baseline: ppl={base_ppl:.2f}, params={base_params}")

print("\ncompress the recurrence matrices (rank 8, per gate):")
for method in ("svd", "semi-nmf", "prune"):
    comp, report = compress_model(
        model, CompressionSpec(method=method, rank=8, target="w_h",
                               scope="per-gate"))
    comp_ppl = perplexity(comp, valid_bc).ppl
    tuned, _ = finetune(comp, train_bc, valid_bc, 2, trainer)
    tuned_ppl = perplexity(tuned, valid_bc).ppl
    print(f"  {method:9s} params {report.params_before['total']} -> "
          f"{report.params_after['total']}, ppl {base_ppl:.2f} -> "
          f"{comp_ppl:.2f} (compressed) -> {tuned_ppl:.2f} (finetuned)")
