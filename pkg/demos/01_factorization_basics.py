"""Three ways to shrink one weight matrix.

Builds a seeded 64x48 matrix, then compares truncated SVD, semi-NMF,
and magnitude pruning at the same parameter budget. Run with:

    python3 demos/01_factorization_basics.py
"""

import numpy as np

from lstmcompress import (norm_stats, prng_matrix, prune_magnitude,
                          rank_to_keep_count, reconstruct, semi_nmf,
                          svd_full, truncated_svd)

w = prng_matrix(64, 48, seed=7)
dense_params = w.size
stats = norm_stats(w)
print(f"matrix 64x48: {dense_params} entries, "
      f"l1={stats.l1:.1f}, nuclear={stats.nuclear:.2f}")

rank = 8
budget = rank_to_keep_count(64, 48, rank)
print(f"\nrank {rank} budget: {budget} parameters "
      f"({budget / dense_params:.1%} of dense)\n")


def err(dense, approx):
    return float(np.linalg.norm(dense.astype(np.float64)
                                - approx.astype(np.float64)))


# Truncated SVD is the best possible rank-8 approximation in the
# Frobenius norm; its error is exactly the dropped singular tail.
fact = truncated_svd(w, rank)
s = svd_full(w).s
tail = float(np.sqrt((s[rank:] ** 2).sum()))
print(f"svd       err={err(w, reconstruct(fact)):8.4f}  "
      f"(singular tail {tail:.4f}), params={fact.param_count()}")

# Semi-NMF keeps the right factor nonnegative, so it can only match or
# trail the unconstrained optimum. The trace shows the monotone descent.
nmf, trace = semi_nmf(w, rank)
print(f"semi-nmf  err={err(w, reconstruct(nmf)):8.4f}  "
      f"({len(trace)} iterations, objective "
      f"{trace[0]:.1f} -> {trace[-1]:.1f}), params={nmf.param_count()}")
assert (nmf.v >= 0).all()

# Pruning keeps the largest-magnitude entries at the same budget.
pruned = prune_magnitude(w, budget)
print(f"prune     err={err(w, reconstruct(pruned)):8.4f}  "
      f"(kept {pruned.kept} of {dense_params}), "
      f"params={pruned.param_count()}")

print("\nerror by rank (svd vs semi-nmf):")
for r in (2, 4, 8, 16, 32, 48):
    e_svd = err(w, reconstruct(truncated_svd(w, r)))
    e_nmf = err(w, reconstruct(semi_nmf(w, r)[0]))
    print(f"  r={r:<3d} svd={e_svd:7.4f}  semi-nmf={e_nmf:7.4f}")
