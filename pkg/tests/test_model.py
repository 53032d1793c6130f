"""LSTM cell, stacked forward pass, loss, and analytic gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lstmcompress import (GATES, DenseSlot, FactorizedMatrix, FactorizedSlot,
                          LmConfig, LstmLayer, LstmLmModel, PrunedSlot,
                          ShapeError, VocabError, build_vocab, cell_forward,
                          count_flops, cross_entropy, lm_forward, prng_matrix,
                          truncated_svd)
from lstmcompress.model import backward_from_cache
from oracles import central_difference, lstm_cell_reference


def make_layer(n_inp, n_dim, seed, dtype=np.float32):
    w_i = prng_matrix(4 * n_dim, n_inp, seed=seed).astype(dtype)
    w_h = prng_matrix(4 * n_dim, n_dim, seed=seed + 1).astype(dtype)
    bias = prng_matrix(1, 4 * n_dim, seed=seed + 2)[0].astype(dtype)
    return LstmLayer(DenseSlot(w_i), DenseSlot(w_h), bias)


def gate_blocks(layer):
    """Per-gate (wx, wh, b) triples in stacked row order."""
    d = layer.n_dim
    wi = layer.w_i.effective()
    wh = layer.w_h.effective()
    out = []
    for g in range(4):
        rows = slice(g * d, (g + 1) * d)
        out.append((wi[rows], wh[rows], layer.bias[rows]))
    return out


class TestCellForward:
    def test_matches_reference_cell(self):
        """Batched cell equals a per-gate straight-line transcription."""
        layer = make_layer(3, 4, seed=10)
        x = prng_matrix(1, 3, seed=20)[0]
        h0 = prng_matrix(1, 4, seed=21)[0]
        c0 = prng_matrix(1, 4, seed=22)[0]
        h, c = cell_forward(layer, x, (h0, c0))
        (wxi, whi, bi), (wxf, whf, bf), (wxo, who, bo), (wxc, whc, bc) = \
            gate_blocks(layer)
        h_ref, c_ref = lstm_cell_reference(wxi, whi, bi, wxf, whf, bf,
                                           wxo, who, bo, wxc, whc, bc,
                                           x, h0, c0)
        np.testing.assert_allclose(h, h_ref, atol=1e-5)
        np.testing.assert_allclose(c, c_ref, atol=1e-5)

    def test_zero_weights_closed_form(self):
        """All-zero weights: every gate sits at 1/2, candidate at zero."""
        d = 4
        layer = LstmLayer(DenseSlot(np.zeros((4 * d, 3), dtype=np.float32)),
                          DenseSlot(np.zeros((4 * d, d), dtype=np.float32)),
                          np.zeros(4 * d, dtype=np.float32))
        x = np.zeros(3, dtype=np.float32)
        h0 = np.zeros(d, dtype=np.float32)
        c0 = np.ones(d, dtype=np.float32)
        h, c = cell_forward(layer, x, (h0, c0))
        np.testing.assert_allclose(c, 0.5, atol=1e-7)        # f*c0 = 0.5
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5), atol=1e-7)

    def test_batch_matches_single(self):
        layer = make_layer(3, 4, seed=30)
        xs = prng_matrix(5, 3, seed=40)
        h0 = prng_matrix(5, 4, seed=41)
        c0 = prng_matrix(5, 4, seed=42)
        hb, cb = cell_forward(layer, xs, (h0, c0))
        for b in range(5):
            h1, c1 = cell_forward(layer, xs[b], (h0[b], c0[b]))
            np.testing.assert_allclose(hb[b], h1, atol=1e-6)
            np.testing.assert_allclose(cb[b], c1, atol=1e-6)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=20, deadline=None)
    def test_state_ranges(self, seed):
        # h = o * tanh(c) is confined to (-1, 1); gates cannot escape it
        layer = make_layer(3, 4, seed=seed)
        x = prng_matrix(2, 3, seed=seed + 50_000) * 3.0
        h0 = np.zeros((2, 4), dtype=np.float32)
        c0 = np.zeros((2, 4), dtype=np.float32)
        h, c = cell_forward(layer, x, (h0, c0))
        assert np.all(np.abs(h) < 1.0)
        assert np.all(np.isfinite(c))

    def test_shape_errors(self):
        layer = make_layer(3, 4, seed=1)
        good = (np.zeros(4, dtype=np.float32), np.zeros(4, dtype=np.float32))
        with pytest.raises(ShapeError):
            cell_forward(layer, np.zeros(5, dtype=np.float32), good)
        with pytest.raises(ShapeError):
            cell_forward(layer, np.zeros(3, dtype=np.float32),
                         (np.zeros(2, dtype=np.float32),
                          np.zeros(4, dtype=np.float32)))


class TestFactorizedSlot:
    def test_full_rank_matches_dense(self):
        """Rank = min(m, n) factorization leaves the cell unchanged."""
        d = 6
        layer = make_layer(5, d, seed=60)
        fact = truncated_svd(layer.w_h.w, d)
        comp = LstmLayer(layer.w_i, FactorizedSlot([fact]), layer.bias)
        x = prng_matrix(3, 5, seed=70)
        h0 = prng_matrix(3, d, seed=71) * 0.5
        c0 = prng_matrix(3, d, seed=72) * 0.5
        h_a, c_a = cell_forward(layer, x, (h0, c0))
        h_b, c_b = cell_forward(comp, x, (h0, c0))
        np.testing.assert_allclose(h_a, h_b, atol=1e-4)
        np.testing.assert_allclose(c_a, c_b, atol=1e-4)

    def test_per_gate_blocks_stack(self):
        d = 4
        w = prng_matrix(4 * d, d, seed=80)
        parts = [truncated_svd(w[g * d:(g + 1) * d], d) for g in range(4)]
        slot = FactorizedSlot(parts)
        assert slot.shape == (4 * d, d)
        x = prng_matrix(2, d, seed=81)
        np.testing.assert_allclose(slot.apply(x), x @ w.T, atol=1e-4)

    def test_param_count(self):
        f = truncated_svd(prng_matrix(8, 6, seed=0), 2)
        slot = FactorizedSlot([f])
        assert slot.param_count() == 2 * (8 + 6)

    def test_rejects_mismatched_blocks(self):
        a = FactorizedMatrix(u=np.zeros((2, 1), dtype=np.float32),
                             v=np.zeros((1, 3), dtype=np.float32))
        b = FactorizedMatrix(u=np.zeros((2, 1), dtype=np.float32),
                             v=np.zeros((1, 4), dtype=np.float32))
        with pytest.raises(ShapeError):
            FactorizedSlot([a, b])


class TestFlopCounting:
    def test_dense_versus_factorized_ratio(self):
        """Per multiply-add, rank r costs r(m+n) against mn dense."""
        m = n = 64
        r = 4
        w = prng_matrix(m, n, seed=5)
        dense = DenseSlot(w)
        fact = FactorizedSlot([truncated_svd(w, r)])
        x = prng_matrix(2, n, seed=6)
        with count_flops() as fc:
            dense.apply(x)
        dense_flops = fc.total
        with count_flops() as fc:
            fact.apply(x)
        fact_flops = fc.total
        assert dense_flops == 2 * m * n
        assert fact_flops == 2 * r * (m + n)
        assert dense_flops / fact_flops == (m * n) / (r * (m + n))

    def test_counter_off_outside_context(self):
        from lstmcompress.model import FLOPS
        DenseSlot(prng_matrix(4, 4, seed=1)).apply(prng_matrix(1, 4, seed=2))
        assert not FLOPS.active


def small_model(tied=False, dropout=0.0, dtype=np.float32, n_layers=2):
    vocab = build_vocab("abcd" * 3, "char")
    cfg = LmConfig(n_emb=4, n_dim=4, n_layers=n_layers, tied=tied,
                   dropout=dropout)
    return LstmLmModel.build(vocab, cfg, seed=3, dtype=dtype)


class TestLmForward:
    def test_shapes(self):
        model = small_model()
        ids = np.zeros((2, 3), dtype=np.int32)
        logits, state, cache = lm_forward(model, ids)
        assert logits.shape == (2, 3, model.vocab.size)
        assert len(state) == 2
        assert cache is None

    def test_state_threading_matches_one_shot(self):
        """Splitting a window and threading state changes nothing."""
        model = small_model()
        ids = np.array([[2, 3, 4, 5, 2, 3]], dtype=np.int32)
        full, _, _ = lm_forward(model, ids)
        l1, s, _ = lm_forward(model, ids[:, :3])
        l2, _, _ = lm_forward(model, ids[:, 3:], s)
        np.testing.assert_allclose(
            np.concatenate([l1, l2], axis=1), full, atol=1e-5)

    def test_state_is_detached(self):
        model = small_model()
        ids = np.zeros((1, 2), dtype=np.int32)
        _, state, _ = lm_forward(model, ids)
        state[0][0][:] = 99.0
        logits, _, _ = lm_forward(model, ids)
        assert np.all(np.isfinite(logits))

    def test_eval_mode_ignores_dropout(self):
        model = small_model(dropout=0.5)
        ids = np.zeros((2, 3), dtype=np.int32)
        a, _, _ = lm_forward(model, ids)
        b, _, _ = lm_forward(model, ids)
        np.testing.assert_array_equal(a, b)

    def test_train_dropout_needs_rng(self):
        model = small_model(dropout=0.5)
        ids = np.zeros((2, 3), dtype=np.int32)
        with pytest.raises(ShapeError):
            lm_forward(model, ids, train=True)

    def test_rejects_out_of_vocab_ids(self):
        model = small_model()
        with pytest.raises(VocabError):
            lm_forward(model, np.full((1, 2), 99, dtype=np.int32))

    def test_rejects_bad_state(self):
        model = small_model()
        ids = np.zeros((2, 3), dtype=np.int32)
        with pytest.raises(ShapeError):
            lm_forward(model, ids, model.init_state(3))

    def test_tied_decoder_shares_embedding(self):
        model = small_model(tied=True)
        assert model.decoder_matrix() is not model.embedding
        np.testing.assert_array_equal(model.decoder_matrix(),
                                      model.embedding.T)
        assert model.decoder_w is None


class TestModelBuild:
    def test_deterministic(self):
        a, b = small_model(), small_model()
        for (na, pa, _), (nb, pb, _) in zip(a.parameters(), b.parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)

    def test_forget_bias_starts_open(self):
        model = small_model()
        d = model.config.n_dim
        for layer in model.layers:
            np.testing.assert_array_equal(layer.bias[d:2 * d], 1.0)
            np.testing.assert_array_equal(layer.bias[:d], 0.0)

    def test_param_breakdown_dense(self):
        model = small_model()
        v, e, d = model.vocab.size, 4, 4
        bd = model.param_breakdown()
        assert bd["embedding"] == v * e
        assert bd["lstm"] == 2 * (4 * d * e + 4 * d * d + 4 * d)
        assert bd["decoder"] == d * v + v
        assert bd["total"] == sum(bd[k] for k in
                                  ("embedding", "lstm", "decoder"))

    def test_tied_needs_matching_dims(self):
        vocab = build_vocab("ab", "char")
        with pytest.raises(ShapeError):
            LmConfig(n_emb=3, n_dim=4, n_layers=1, tied=True).validate()
        with pytest.raises(ShapeError):
            LstmLmModel.build(vocab, LmConfig(n_emb=3, n_dim=4, n_layers=1,
                                              tied=True))

    def test_copy_is_deep(self):
        model = small_model()
        clone = model.copy()
        clone.embedding[0, 0] += 1.0
        assert model.embedding[0, 0] != clone.embedding[0, 0]


class TestCrossEntropy:
    def test_frozen_example(self):
        # -log softmax([1,2,3])[2] = log(e^1 + e^2 + e^3) - 3
        logits = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
        loss, n = cross_entropy(logits, np.array([2]))
        assert n == 1
        assert loss == pytest.approx(0.40760596, abs=1e-6)

    def test_uniform_logits_give_log_vocab(self):
        v = 7
        logits = np.zeros((4, 3, v), dtype=np.float32)
        targets = np.zeros((4, 3), dtype=np.int64)
        loss, n = cross_entropy(logits, targets)
        assert n == 12
        assert loss == pytest.approx(np.log(v), rel=1e-6)

    def test_overflow_safe(self):
        logits = np.array([[1000.0, 0.0]], dtype=np.float32)
        loss, _ = cross_entropy(logits, np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_entropy(np.zeros((2, 3, 5)), np.zeros((2, 2), dtype=int))

    def test_target_out_of_range(self):
        with pytest.raises(VocabError):
            cross_entropy(np.zeros((1, 3)), np.array([7]))


def fd_check(model, ids, masks=None, eps=1e-3, tol=1e-3):
    """Compare analytic gradients against central differences.

    Relative error per entry uses a floor of max(1e-3, |analytic|, |fd|)
    in the denominator so near-zero entries do not blow up the ratio.
    """
    targets = np.roll(ids, -1, axis=1)

    def loss():
        logits, _, _ = lm_forward(model, ids, train=masks is not None,
                                  masks=masks)
        return cross_entropy(logits, targets)[0]

    logits, _, cache = lm_forward(model, ids, train=masks is not None,
                                  masks=masks, want_cache=True)
    grads = backward_from_cache(model, cache, logits, targets)

    worst = 0.0
    for name, arr, mask in model.parameters():
        fd = central_difference(loss, arr, eps=eps)
        if mask is not None:
            fd = fd * mask
        denom = np.maximum.reduce(
            [np.abs(grads[name]), np.abs(fd), np.full(fd.shape, 1e-3)])
        rel = np.max(np.abs(grads[name] - fd) / denom)
        worst = max(worst, rel)
        assert rel < tol, f"{name}: rel err {rel:.2e}"
    return worst


def fd_model(seed=3):
    """Tiny float64 model with every slot kind exercised at once."""
    model = small_model(dtype=np.float64, n_layers=2)
    d = model.config.n_dim

    # layer 0 recurrence: four per-gate low-rank blocks
    w = model.layers[0].w_h.w
    parts = []
    for g in range(4):
        block = w[g * d:(g + 1) * d].astype(np.float64)
        u, s, vt = np.linalg.svd(block, full_matrices=False)
        r = 2
        parts.append(FactorizedMatrix(u=np.ascontiguousarray(u[:, :r] * s[:r]),
                                      v=np.ascontiguousarray(vt[:r])))
    model.layers[0].w_h = FactorizedSlot(parts)

    # layer 1 input: one stacked low-rank block
    w = model.layers[1].w_i.w.astype(np.float64)
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    model.layers[1].w_i = FactorizedSlot(
        [FactorizedMatrix(u=np.ascontiguousarray(u[:, :3] * s[:3]),
                          v=np.ascontiguousarray(vt[:3]))])

    # layer 1 recurrence: magnitude-pruned with a frozen mask
    w = model.layers[1].w_h.w
    flat = np.abs(w).ravel()
    keep = w.size // 2
    order = np.argsort(-flat, kind="stable")[:keep]
    mask = np.zeros(w.size, dtype=bool)
    mask[order] = True
    mask = mask.reshape(w.shape)
    model.layers[1].w_h = PrunedSlot(np.where(mask, w, 0.0), mask, keep)
    return model


class TestGradients:
    def test_dense_model(self):
        model = small_model(dtype=np.float64)
        ids = np.array([[2, 3, 4], [5, 2, 3]], dtype=np.int32)
        fd_check(model, ids)

    def test_all_slot_kinds(self):
        """Factorized (per-gate and stacked) and pruned slots backprop."""
        model = fd_model()
        ids = np.array([[2, 3, 4], [5, 2, 3]], dtype=np.int32)
        fd_check(model, ids)

    def test_tied_embeddings(self):
        model = small_model(tied=True, dtype=np.float64)
        ids = np.array([[2, 3, 4], [5, 2, 3]], dtype=np.int32)
        fd_check(model, ids)

    def test_dropout_with_fixed_masks(self):
        model = small_model(dropout=0.5, dtype=np.float64)
        ids = np.array([[2, 3, 4], [5, 2, 3]], dtype=np.int32)
        rng = np.random.default_rng(9)
        steps, layers, batch, d = 3, 2, 2, 4
        masks = [[None if l == 0 else
                  ((rng.random((batch, d)) >= 0.5) / 0.5).astype(np.float64)
                  for l in range(layers)] for _ in range(steps)]
        fd_check(model, ids, masks=masks)

    def test_pruned_gradient_respects_mask(self):
        model = fd_model()
        ids = np.array([[2, 3], [4, 5]], dtype=np.int32)
        targets = np.roll(ids, -1, axis=1)
        logits, _, cache = lm_forward(model, ids, want_cache=True)
        grads = backward_from_cache(model, cache, logits, targets)
        slot = model.layers[1].w_h
        assert np.all(grads["layers.1.w_h.w"][~slot.mask] == 0.0)
