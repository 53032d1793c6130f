"""Seeded matrix generation, SVD wrapper, and norm diagnostics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lstmcompress import (InvalidMatrix, InvalidShape, as_matrix, derive_seed,
                          norm_stats, prng_matrix, svd_full)
from oracles import jacobi_svd


class TestPrngMatrix:
    def test_deterministic(self):
        a = prng_matrix(5, 7, seed=123)
        b = prng_matrix(5, 7, seed=123)
        assert np.array_equal(a, b)

    def test_frozen_values(self):
        """First draws from seed 7 are pinned; any platform must match."""
        m = prng_matrix(2, 3, seed=7)
        expected = np.array(
            [[-0.2203405, -0.9664234, 0.80152136],
             [0.1658606, -0.09511621, -0.50113696]], dtype=np.float32)
        np.testing.assert_allclose(m, expected, rtol=0, atol=1e-7)

    def test_seeds_independent(self):
        a = prng_matrix(4, 4, seed=0)
        b = prng_matrix(4, 4, seed=1)
        assert not np.array_equal(a, b)

    def test_dtype_and_order(self):
        m = prng_matrix(3, 2, seed=9)
        assert m.dtype == np.float32
        assert m.flags.c_contiguous
        assert m.shape == (3, 2)

    def test_range(self):
        m = prng_matrix(64, 64, seed=11, scale=0.5)
        assert np.all(m >= -0.5) and np.all(m <= 0.5)
        # draws should actually spread over the interval
        assert m.min() < -0.4 and m.max() > 0.4

    def test_prefix_property(self):
        """A larger matrix from the same seed starts with the same draws."""
        small = prng_matrix(2, 3, seed=42)
        big = prng_matrix(3, 4, seed=42)
        np.testing.assert_array_equal(small.ravel(), big.ravel()[:6])

    def test_bad_shape(self):
        with pytest.raises(InvalidShape):
            prng_matrix(0, 3, seed=1)
        with pytest.raises(InvalidShape):
            prng_matrix(3, -1, seed=1)

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            prng_matrix(2, 2, seed=1, scale=float("nan"))


def test_derive_seed_streams():
    seeds = {derive_seed(7, k) for k in range(100)}
    assert len(seeds) == 100
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(7, 3) != derive_seed(8, 3)


class TestAsMatrix:
    def test_accepts_lists(self):
        m = as_matrix([[1, 2], [3, 4]])
        assert m.dtype == np.float32
        assert m.shape == (2, 2)

    def test_rejects_1d(self):
        with pytest.raises(InvalidMatrix):
            as_matrix(np.zeros(3))

    def test_rejects_empty(self):
        with pytest.raises(InvalidMatrix):
            as_matrix(np.zeros((0, 4)))

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidMatrix):
            as_matrix(np.array([[1.0, np.nan]]))
        with pytest.raises(InvalidMatrix):
            as_matrix(np.array([[np.inf, 1.0]]))

    def test_rejects_complex(self):
        with pytest.raises(InvalidMatrix):
            as_matrix(np.array([[1 + 2j]]))


class TestSvdFull:
    def test_matches_independent_jacobi(self):
        """Singular values agree with a one-sided Jacobi reimplementation."""
        w = prng_matrix(8, 6, seed=42)
        res = svd_full(w)
        _, s_ref, _ = jacobi_svd(np.asarray(w, dtype=np.float64))
        np.testing.assert_allclose(res.s, s_ref, rtol=1e-4, atol=1e-6)

    def test_reconstruction(self):
        w = prng_matrix(8, 6, seed=42)
        res = svd_full(w)
        rec = (res.u * res.s) @ res.vt
        assert np.max(np.abs(rec - w)) < 1e-5

    def test_shapes_descending(self):
        res = svd_full(prng_matrix(5, 9, seed=2))
        assert res.u.shape == (5, 5)
        assert res.s.shape == (5,)
        assert res.vt.shape == (5, 9)
        assert np.all(np.diff(res.s) <= 0)

    def test_orthonormal_factors(self):
        res = svd_full(prng_matrix(10, 7, seed=5))
        eye = np.eye(7, dtype=np.float64)
        np.testing.assert_allclose(res.u.T.astype(np.float64) @ res.u,
                                   eye, atol=1e-4)
        np.testing.assert_allclose(res.vt.astype(np.float64) @ res.vt.T,
                                   eye, atol=1e-4)

    def test_sign_convention(self):
        """Dominant entry of every left singular vector is non-negative."""
        for seed in range(10):
            res = svd_full(prng_matrix(6, 6, seed=seed))
            dominant = res.u[np.abs(res.u).argmax(axis=0),
                             np.arange(res.u.shape[1])]
            assert np.all(dominant >= 0)

    def test_sign_convention_is_deterministic(self):
        w = prng_matrix(6, 4, seed=31)
        a, b = svd_full(w), svd_full(w.copy())
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.vt, b.vt)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidMatrix):
            svd_full(np.array([1.0, 2.0]))


class TestNormStats:
    def test_frozen_example_uniform_magnitudes(self):
        # all |entries| equal -> zero spread; rank 1 -> single singular value
        stats = norm_stats([[1.0, -1.0], [1.0, -1.0]])
        assert stats.l1 == pytest.approx(4.0)
        assert stats.l1_std == pytest.approx(0.0)
        assert stats.nuclear == pytest.approx(2.0, abs=1e-6)

    def test_frozen_example_spread(self):
        stats = norm_stats([[0.0, 2.0], [0.0, 2.0]])
        assert stats.l1 == pytest.approx(4.0)
        assert stats.l1_std == pytest.approx(1.0)
        assert stats.nuclear == pytest.approx(2.0 * np.sqrt(2.0), abs=1e-6)

    def test_population_not_sample_std(self):
        # ddof 0: std of |{0, 2}| is 1, not sqrt(2)
        stats = norm_stats([[0.0, 2.0]])
        assert stats.l1_std == pytest.approx(1.0)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_norm_ordering(self, seed):
        """nuclear >= frobenius >= spectral for any matrix."""
        w = prng_matrix(5, 8, seed=seed).astype(np.float64)
        s = np.linalg.svd(w, compute_uv=False)
        nuc = norm_stats(w).nuclear
        assert nuc >= np.linalg.norm(w) - 1e-8
        assert np.linalg.norm(w) >= s[0] - 1e-8
