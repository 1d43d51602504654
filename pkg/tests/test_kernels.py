import math

import numpy as np
import pytest

from tokensieve import kernels
from tokensieve.errors import DegenerateInputError, ParameterError, ShapeError


def naive_matmul(a, b):
    """Triple-loop reference with the pinned left-to-right accumulation."""
    dt = a.dtype.type
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = dt(0.0)
            for p in range(k):
                acc = dt(acc + dt(a[i, p] * b[p, j]))
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity_left_factor(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(kernels.matmul(np.eye(2), a), a)

    def test_hand_arithmetic(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        assert np.array_equal(kernels.matmul(a, b), np.array([[2.0], [4.0]]))

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_matches_naive_oracle_exactly(self, dtype):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, k, n = rng.integers(1, 12, size=3)
            a = rng.standard_normal((m, k)).astype(dtype)
            b = rng.standard_normal((k, n)).astype(dtype)
            assert np.array_equal(kernels.matmul(a, b), naive_matmul(a, b))

    def test_random_8x8_vs_oracle(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((8, 8))
        b = rng.standard_normal((8, 8))
        assert np.array_equal(kernels.matmul(a, b), naive_matmul(a, b))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            kernels.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_dtype_mismatch(self):
        with pytest.raises(ShapeError):
            kernels.matmul(np.ones((2, 2), np.float32), np.ones((2, 2), np.float64))

    def test_non_finite_rejected(self):
        bad = np.array([[np.nan, 1.0], [0.0, 1.0]])
        with pytest.raises(DegenerateInputError):
            kernels.matmul(bad, np.eye(2))

    def test_deterministic_across_calls(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((17, 33)).astype(np.float32)
        b = rng.standard_normal((33, 9)).astype(np.float32)
        assert np.array_equal(kernels.matmul(a, b), kernels.matmul(a, b))


class TestSoftmaxRows:
    def test_symmetry(self):
        out = kernels.softmax_rows(np.array([[0.0, 0.0]]), 1.0)
        assert np.array_equal(out, np.array([[0.5, 0.5]]))

    def test_analytic(self):
        out = kernels.softmax_rows(np.array([[math.log(2.0), 0.0]]), 1.0)
        np.testing.assert_allclose(out, [[2 / 3, 1 / 3]], rtol=1e-12)

    def test_low_temperature_limit(self):
        out = kernels.softmax_rows(np.array([[0.3, 0.9, 0.1]]), 1e-6)
        assert out[0].argmax() == 1
        assert out[0, 1] > 0.999

    def test_tau_validation(self):
        for tau in (0.0, -1.0):
            with pytest.raises(ParameterError):
                kernels.softmax_rows(np.ones((1, 2)), tau)

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_rows_sum_to_one(self, dtype):
        rng = np.random.default_rng(3)
        for _ in range(50):
            m, n = rng.integers(1, 20, size=2)
            x = rng.uniform(-100, 100, size=(m, n)).astype(dtype)
            tau = float(rng.uniform(1e-3, 1e3))
            out = kernels.softmax_rows(x, tau)
            sums = out.astype(np.float64).sum(axis=1)
            assert np.abs(sums - 1.0).max() <= 1e-6

    def test_order_preserving_within_row(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 7))
        out = kernels.softmax_rows(x, 0.5)
        for i in range(5):
            assert np.array_equal(np.argsort(x[i]), np.argsort(out[i]))


class TestCosineSim:
    def test_identical_direction(self):
        out = kernels.cosine_sim(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
        assert out[0, 0] == 1.0

    def test_orthogonal(self):
        out = kernels.cosine_sim(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert out[0, 0] == 0.0

    def test_positive_scaling_invariance(self):
        out = kernels.cosine_sim(np.array([[3.0, 4.0]]), np.array([[6.0, 8.0]]))
        assert out[0, 0] == 1.0

    def test_single_row_scaling_property(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 16))
        b = rng.standard_normal((4, 16))
        base = kernels.cosine_sim(a, b)
        for c in (1e-6, 0.37, 2.0, 1e8):
            scaled = a.copy()
            scaled[2] *= c
            out = kernels.cosine_sim(scaled, b)
            assert np.abs(out - base).max() <= 1e-12

    def test_entries_bounded(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((20, 8))
        out = kernels.cosine_sim(a, a)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_zero_row_rejected_with_row_named(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(DegenerateInputError, match="row 1 of a"):
            kernels.cosine_sim(a, np.array([[1.0, 1.0]]))

    def test_feature_dim_mismatch(self):
        with pytest.raises(ShapeError):
            kernels.cosine_sim(np.ones((2, 3)), np.ones((2, 4)))


class TestTopkIndices:
    def test_hand_ranked(self):
        assert kernels.topk_indices([0.1, 0.9, 0.5], 2).tolist() == [1, 2]

    def test_tie_rule_lower_index(self):
        assert kernels.topk_indices([0.5, 0.5], 1).tolist() == [0]

    def test_against_sort_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            m = int(rng.integers(1, 50))
            scores = rng.choice([-1.0, 0.0, 0.25, 0.5, 1.0, 2.0], size=m)
            k = int(rng.integers(1, m + 1))
            want = sorted(sorted(range(m), key=lambda i: (-scores[i], i))[:k])
            assert kernels.topk_indices(scores, k).tolist() == want

    def test_k_validation(self):
        with pytest.raises(ParameterError):
            kernels.topk_indices([1.0, 2.0], 0)
        with pytest.raises(ParameterError):
            kernels.topk_indices([1.0, 2.0], 3)

    def test_output_ascending(self):
        idx = kernels.topk_indices([5.0, 1.0, 4.0, 3.0, 2.0], 3)
        assert idx.tolist() == sorted(idx.tolist())


class TestLinear:
    def test_identity_case(self):
        x = np.arange(6, dtype=np.float64).reshape(2, 3)
        out = kernels.linear(x, np.eye(3), np.zeros((1, 3)))
        assert np.array_equal(out, x)

    def test_hand_arithmetic(self):
        out = kernels.linear(
            np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.array([[0.5]])
        )
        assert np.array_equal(out, np.array([[2.5]]))

    def test_bias_shape_enforced(self):
        with pytest.raises(ShapeError):
            kernels.linear(np.ones((2, 3)), np.ones((3, 4)), np.ones((1, 3)))

    def test_matches_naive_recipe(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((5, 4)).astype(np.float32)
        w = rng.standard_normal((4, 3)).astype(np.float32)
        b = rng.standard_normal((1, 3)).astype(np.float32)
        assert np.array_equal(kernels.linear(x, w, b), naive_matmul(x, w) + b)


class TestRowSums:
    def test_left_to_right_float64(self):
        x = np.array([[1e16, 1.0, -1e16]], dtype=np.float64)
        # sequential: (1e16 + 1) loses the 1, then -1e16 -> 0; pairwise would differ
        assert kernels.row_sums(x)[0] == ((1e16 + 1.0) - 1e16)

    def test_always_float64(self):
        out = kernels.row_sums(np.ones((2, 3), dtype=np.float32))
        assert out.dtype == np.float64
        assert np.array_equal(out, [3.0, 3.0])
