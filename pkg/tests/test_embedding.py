import numpy as np
import pytest

import ncskit.embedding as emb_mod
from ncskit.embedding import IdentityEmbedding, RandomEmbedding, generate
from ncskit.errors import InputError, NumericError


class TestGenerate:
    def test_deterministic_in_seed(self):
        a = generate(5, 5, seed=123)
        b = generate(5, 5, seed=123)
        np.testing.assert_array_equal(a.dense(), b.dense())

    def test_different_seeds_differ(self):
        a = generate(40, 4, seed=1)
        b = generate(40, 4, seed=2)
        assert not np.array_equal(a.dense(), b.dense())

    def test_wide_matrix_rejected(self):
        with pytest.raises(InputError):
            generate(3, 5, seed=0)

    def test_entries_look_standard_normal(self):
        e = generate(2000, 10, seed=9)
        vals = e.dense().ravel()
        assert abs(vals.mean()) < 4 / np.sqrt(vals.size)
        assert abs(vals.std() - 1.0) < 0.02

    def test_pinv_identity_against_lstsq_oracle(self):
        # pinv(A) A = I, cross-checked by solving A Y = A column by column
        e = generate(1000, 20, seed=42)
        a = e.dense()
        pinv_a = e.gram_inv @ a.T
        np.testing.assert_allclose(pinv_a @ a, np.eye(20), atol=1e-6)
        oracle, *_ = np.linalg.lstsq(a, a, rcond=None)
        np.testing.assert_allclose(pinv_a @ a, oracle, atol=1e-8)

    def test_lazy_matches_dense_bit_for_bit(self):
        dense = generate(3000, 7, seed=77)
        lazy = generate(3000, 7, seed=77, max_dense_entries=1000)
        assert dense.matrix is not None and lazy.matrix is None
        np.testing.assert_array_equal(dense.dense(), lazy.dense())
        np.testing.assert_array_equal(dense.gram, lazy.gram)

    def test_lazy_encode_decode_agree_with_dense(self):
        dense = generate(3000, 7, seed=5)
        lazy = generate(3000, 7, seed=5, max_dense_entries=1000)
        rng = np.random.default_rng(0)
        x = rng.normal(size=3000)
        y = rng.normal(size=7)
        np.testing.assert_allclose(lazy.encode(x), dense.encode(x), rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(lazy.decode(y), dense.decode(y), rtol=1e-12, atol=1e-15)
        xs = rng.normal(size=(4, 3000))
        np.testing.assert_allclose(lazy.encode(xs), dense.encode(xs), rtol=1e-12, atol=1e-15)

    def test_regeneration_gives_up_after_retries(self, monkeypatch):
        monkeypatch.setattr(emb_mod, "_COND_LIMIT", 0.0)  # nothing passes
        with pytest.raises(NumericError, match="retries"):
            generate(20, 3, seed=0)

    def test_retry_attempts_draw_fresh_matrices(self):
        base = generate(30, 3, seed=11)
        retry = RandomEmbedding(30, 3, 11, attempt=1,
                                gram=base.gram, gram_inv=base.gram_inv,
                                matrix=None)
        assert not np.array_equal(base.dense(), retry.dense())

    def test_float32_variant(self):
        e32 = generate(500, 8, seed=3, dtype=np.float32)
        e64 = generate(500, 8, seed=3)
        assert e32.dense().dtype == np.float32
        assert e32.gram.dtype == np.float64  # factorization always float64
        rng = np.random.default_rng(0)
        x = rng.normal(size=500)
        y = rng.uniform(-0.1, 0.1, size=8)
        # float64 results in/out, float32 accuracy inside
        assert e32.encode(x).dtype == np.float64
        assert e32.decode(y).dtype == np.float64
        np.testing.assert_allclose(e32.encode(x), e64.encode(x), rtol=2e-4, atol=1e-6)
        np.testing.assert_allclose(e32.encode(e32.decode(y)), y, rtol=1e-4, atol=1e-6)
        # deterministic, and lazy storage still matches dense bit for bit
        np.testing.assert_array_equal(
            e32.dense(), generate(500, 8, seed=3, dtype=np.float32).dense())
        lazy = generate(500, 8, seed=3, max_dense_entries=100, dtype=np.float32)
        np.testing.assert_array_equal(e32.dense(), lazy.dense())

    def test_rejected_dtype(self):
        with pytest.raises(InputError):
            generate(10, 2, seed=0, dtype=np.int32)


class TestEncodeDecode:
    def fixed_small(self):
        # A = [[1,0],[1,1],[0,2]]: gram [[2,1],[1,5]]
        a = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
        gram = a.T @ a
        return RandomEmbedding(3, 2, seed=0, attempt=0, gram=gram,
                               gram_inv=np.linalg.inv(gram), matrix=a)

    def test_encode_zero_is_zero(self):
        e = generate(10, 3, seed=1)
        np.testing.assert_array_equal(e.encode(np.zeros(10)), np.zeros(3))

    def test_identity_double_encodes_to_clip(self):
        e = IdentityEmbedding(4)
        x = np.array([0.5, -0.3, 0.05, 0.0])
        np.testing.assert_array_equal(e.encode(x), x)
        np.testing.assert_array_equal(e.decode(x), x)

    def test_encode_matches_normal_equations_oracle(self):
        # solve (A^T A) y = A^T x independently: y = (7/9, 13/9)
        e = self.fixed_small()
        x = np.array([1.0, 2.0, 3.0])
        y = e.encode(x)
        np.testing.assert_allclose(y, [7.0 / 9.0, 13.0 / 9.0], rtol=1e-14)
        oracle = np.linalg.solve(e.gram, e.matrix.T @ x)
        np.testing.assert_allclose(y, oracle, rtol=1e-14)

    def test_encode_clips_into_bounds(self):
        e = self.fixed_small()
        y = e.encode(np.array([1.0, 2.0, 3.0]), bounds=(-0.1, 0.1))
        np.testing.assert_array_equal(y, [0.1, 0.1])

    def test_decode_zero_and_hand_product(self):
        e = self.fixed_small()
        np.testing.assert_array_equal(e.decode(np.zeros(2)), np.zeros(3))
        np.testing.assert_allclose(e.decode(np.array([2.0, -1.0])), [2.0, 1.0, -2.0])

    def test_decode_linearity(self):
        e = generate(50, 6, seed=3)
        rng = np.random.default_rng(3)
        for _ in range(10):
            y1, y2 = rng.normal(size=(2, 6))
            np.testing.assert_allclose(
                e.decode(y1 + y2), e.decode(y1) + e.decode(y2), atol=1e-9)

    def test_encode_linearity(self):
        e = generate(80, 5, seed=8)
        rng = np.random.default_rng(8)
        for _ in range(10):
            x = rng.normal(size=80)
            alpha = rng.normal()
            np.testing.assert_allclose(
                e.encode(alpha * x), alpha * e.encode(x), rtol=1e-9, atol=1e-12)

    def test_non_finite_inputs_rejected(self):
        e = generate(6, 2, seed=0)
        x = np.zeros(6)
        x[3] = np.inf
        with pytest.raises(InputError):
            e.encode(x)
        with pytest.raises(InputError):
            e.decode(np.array([np.nan, 0.0]))

    def test_shape_mismatch_rejected(self):
        e = generate(6, 2, seed=0)
        with pytest.raises(InputError):
            e.encode(np.zeros(5))
        with pytest.raises(InputError):
            e.decode(np.zeros(3))


class TestProjectionProperties:
    def test_projection_idempotent(self):
        rng = np.random.default_rng(21)
        for seed in range(5):
            e = generate(60, 8, seed=seed)
            x = rng.normal(size=60)
            p1 = e.decode(e.encode(x))
            p2 = e.decode(e.encode(p1))
            np.testing.assert_allclose(p2, p1, rtol=1e-6, atol=1e-9)

    def test_exact_round_trip_on_column_space(self):
        rng = np.random.default_rng(22)
        for seed in range(5):
            e = generate(60, 8, seed=seed)
            y = rng.uniform(-0.1, 0.1, size=8)
            np.testing.assert_allclose(e.encode(e.decode(y)), y, rtol=1e-6, atol=1e-12)

    def test_batch_encode_matches_single(self):
        e = generate(40, 5, seed=2)
        rng = np.random.default_rng(2)
        xs = rng.normal(size=(7, 40))
        batch = e.encode(xs, bounds=(-0.5, 0.5))
        for i in range(7):
            # batch dgemm and single dgemv kernels may round differently
            np.testing.assert_allclose(batch[i], e.encode(xs[i], bounds=(-0.5, 0.5)),
                                       rtol=1e-13, atol=1e-15)
