"""Kernel tests: masked attention, PCA, spectral norm against independent oracles."""

import math

import numpy as np
import pytest

from semkv.errors import DimensionError, EmptyInputError
from semkv.linalg import (
    AttentionInputs,
    CausalMask,
    attention_output,
    attention_weights,
    masked_softmax,
    pca_2d,
    spectral_norm,
)


def naive_attention_weights(q, k, offset):
    """Direct softmax(QK^T/sqrt(d) + M) via plain Python loops (no max shift)."""
    rows, d = q.shape
    n = k.shape[0]
    out = [[0.0] * n for _ in range(rows)]
    for i in range(rows):
        scores = []
        for j in range(n):
            s = sum(q[i][a] * k[j][a] for a in range(d)) / math.sqrt(d)
            scores.append(s if j <= offset + i else None)
        total = sum(math.exp(s) for s in scores if s is not None)
        for j in range(n):
            if scores[j] is not None:
                out[i][j] = math.exp(scores[j]) / total
    return np.array(out)


def naive_matmul(a, b):
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            for k in range(inner):
                out[i, j] += a[i, k] * b[k, j]
    return out


def make_inputs(rng, n, d):
    return AttentionInputs(
        queries=rng.standard_normal((n, d)),
        keys=rng.standard_normal((n, d)),
        values=rng.standard_normal((n, d)),
    )


class TestAttentionWeights:
    def test_single_token(self):
        rng = np.random.default_rng(0)
        inputs = make_inputs(rng, 1, 3)
        w = attention_weights(inputs, CausalMask.full(1))
        assert w.shape == (1, 1)
        assert w[0, 0] == 1.0

    def test_zero_queries_uniform_causal(self):
        inputs = AttentionInputs(
            queries=np.zeros((2, 3)),
            keys=np.arange(6.0).reshape(2, 3),
            values=np.ones((2, 3)),
        )
        w = attention_weights(inputs, CausalMask.full(2))
        np.testing.assert_allclose(w, [[1.0, 0.0], [0.5, 0.5]], atol=1e-15)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(42)
        inputs = make_inputs(rng, 8, 4)
        w = attention_weights(inputs, CausalMask.full(8))
        expected = naive_attention_weights(inputs.queries, inputs.keys, offset=0)
        np.testing.assert_allclose(w, expected, rtol=1e-12, atol=1e-15)

    def test_window_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        inputs = make_inputs(rng, 10, 4)
        w = attention_weights(
            inputs, CausalMask.window(3, 10), query_rows=range(7, 10)
        )
        expected = naive_attention_weights(
            inputs.queries[7:], inputs.keys, offset=7
        )
        np.testing.assert_allclose(w, expected, rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_rows_stochastic_and_causal(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 20))
        inputs = make_inputs(rng, n, 5)
        w = attention_weights(inputs, CausalMask.full(n))
        np.testing.assert_allclose(w.sum(axis=1), np.ones(n), atol=1e-9)
        assert (w >= 0).all()
        blocked = ~CausalMask.full(n).allowed()
        assert (w[blocked] == 0.0).all()

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal((4, 6))
        allowed = CausalMask(4, 6, offset=2).allowed()
        base = masked_softmax(scores, allowed)
        shifted = masked_softmax(scores + 123.456, allowed)
        np.testing.assert_allclose(base, shifted, atol=1e-9)

    def test_large_scores_do_not_overflow(self):
        scores = np.array([[1e4, 9.9e3, -1e4]])
        w = masked_softmax(scores, np.ones((1, 3), dtype=bool))
        assert np.isfinite(w).all()
        assert abs(w.sum() - 1) < 1e-9

    def test_mask_shape_mismatch(self):
        rng = np.random.default_rng(0)
        inputs = make_inputs(rng, 4, 2)
        with pytest.raises(DimensionError):
            attention_weights(inputs, CausalMask.full(5))

    def test_mask_offset_mismatch(self):
        rng = np.random.default_rng(0)
        inputs = make_inputs(rng, 4, 2)
        with pytest.raises(DimensionError):
            attention_weights(
                inputs, CausalMask(2, 4, offset=1), query_rows=range(2, 4)
            )

    def test_empty_inputs_rejected(self):
        with pytest.raises(EmptyInputError):
            AttentionInputs(
                queries=np.zeros((0, 2)), keys=np.zeros((0, 2)), values=np.zeros((0, 2))
            )

    def test_mismatched_qkv_shapes(self):
        with pytest.raises(DimensionError):
            AttentionInputs(
                queries=np.zeros((2, 2)), keys=np.zeros((2, 3)), values=np.zeros((2, 2))
            )


class TestAttentionOutput:
    def test_identity_weights(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(attention_output(np.eye(4), v), v)

    def test_uniform_row_is_column_mean(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((5, 3))
        w = np.full((1, 5), 1 / 5)
        np.testing.assert_allclose(attention_output(w, v)[0], v.mean(axis=0), rtol=1e-12)

    def test_matches_naive_matmul(self):
        rng = np.random.default_rng(11)
        w = rng.standard_normal((3, 6))
        v = rng.standard_normal((6, 4))
        np.testing.assert_allclose(
            attention_output(w, v), naive_matmul(w, v), rtol=1e-12
        )

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            attention_output(np.ones((2, 3)), np.ones((4, 2)))


class TestPCA2D:
    def test_identical_points(self):
        pts = np.tile([1.0, 2.0, 3.0], (6, 1))
        coords = pca_2d(pts)
        np.testing.assert_allclose(coords, np.zeros((6, 2)), atol=1e-12)

    def test_rank2_plane_preserves_distances(self):
        rng = np.random.default_rng(5)
        basis, _ = np.linalg.qr(rng.standard_normal((16, 2)))
        flat = rng.standard_normal((20, 2)) @ basis.T  # exactly rank-2 in d=16
        coords = pca_2d(flat)
        orig = np.linalg.norm(flat[:, None] - flat[None, :], axis=2)
        proj = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        np.testing.assert_allclose(proj, orig, atol=1e-6)

    def test_rank2_captures_all_variance(self):
        rng = np.random.default_rng(6)
        basis, _ = np.linalg.qr(rng.standard_normal((8, 2)))
        flat = rng.standard_normal((30, 2)) @ basis.T
        coords = pca_2d(flat)
        total = ((flat - flat.mean(axis=0)) ** 2).sum()
        captured = (coords**2).sum()
        assert captured >= (1 - 1e-9) * total

    def test_matches_dense_eigensolver(self):
        rng = np.random.default_rng(123)
        pts = rng.standard_normal((32, 64)) * np.linspace(3, 0.1, 64)
        coords = pca_2d(pts)
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / pts.shape[0]
        evals, evecs = np.linalg.eigh(cov)
        axes = evecs[:, np.argsort(evals)[::-1][:2]]
        for col in range(2):
            v = axes[:, col]
            nz = np.flatnonzero(np.abs(v) > 1e-12)[0]
            if v[nz] < 0:
                axes[:, col] = -v
        np.testing.assert_allclose(coords, centered @ axes, atol=1e-6)

    def test_deterministic_sign(self):
        rng = np.random.default_rng(9)
        pts = rng.standard_normal((12, 5))
        a, b = pca_2d(pts), pca_2d(pts)
        np.testing.assert_array_equal(a, b)

    def test_one_dimensional_points(self):
        coords = pca_2d(np.array([[1.0], [3.0], [5.0]]))
        np.testing.assert_allclose(coords[:, 0], [-2.0, 0.0, 2.0], atol=1e-12)
        np.testing.assert_array_equal(coords[:, 1], np.zeros(3))

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            pca_2d(np.zeros((0, 4)))


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(5)) == pytest.approx(1.0, rel=1e-8)

    def test_diagonal(self):
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-8)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((3, 4))) == 0.0

    def test_matches_svd(self):
        rng = np.random.default_rng(77)
        w = rng.standard_normal((8, 8))
        expected = np.linalg.svd(w, compute_uv=False)[0]
        assert spectral_norm(w) == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_dominates_random_unit_vectors(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((6, 9))
        bound = spectral_norm(w)
        for _ in range(100):
            v = rng.standard_normal(6)
            v /= np.linalg.norm(v)
            assert np.linalg.norm(v @ w) <= bound * (1 + 1e-9)

    def test_rectangular_matches_svd(self):
        rng = np.random.default_rng(13)
        w = rng.standard_normal((5, 12))
        expected = np.linalg.svd(w, compute_uv=False)[0]
        assert spectral_norm(w) == pytest.approx(expected, rel=1e-6)
