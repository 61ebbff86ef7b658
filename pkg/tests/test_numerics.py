import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emskv.errors import DegenerateInputError, InvalidArgumentError
from emskv.numerics import cosine_similarity, mean_pool_1d, pairwise_cosine, stable_softmax_row, top_k_indices
from oracles import mp_cosine, naive_softmax, pool_oracle

finite = st.floats(-50, 50, allow_nan=False)


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(stable_softmax_row([0, 0, 0]), [1 / 3] * 3, atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = stable_softmax_row([1000.0, 1000.0])
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_matches_naive_oracle(self):
        np.testing.assert_allclose(stable_softmax_row([1, 2, 3]), naive_softmax([1, 2, 3]), rtol=0, atol=1e-12)

    def test_empty_row_rejected(self):
        with pytest.raises(InvalidArgumentError):
            stable_softmax_row([])

    @given(arrays(np.float64, st.integers(1, 40), elements=finite), st.randoms(use_true_random=False))
    def test_sums_to_one_and_permutation_equivariant(self, x, rnd):
        out = stable_softmax_row(x)
        assert abs(out.sum() - 1) <= 1e-12
        perm = list(range(x.size))
        rnd.shuffle(perm)
        np.testing.assert_allclose(stable_softmax_row(x[perm]), out[perm], rtol=1e-12, atol=1e-15)


class TestCosine:
    def test_identity(self):
        assert cosine_similarity([1.0, -2.0, 0.5], [1.0, -2.0, 0.5]) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_matches_high_precision_oracle(self):
        assert abs(cosine_similarity([1, 2, 3], [4, 5, 6]) - mp_cosine([1, 2, 3], [4, 5, 6])) <= 1e-12

    def test_zero_vector_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity([0, 0], [1, 0])

    def test_clamped_to_unit_interval(self):
        v = np.array([0.1, 0.2, 0.3]) * 3
        assert -1.0 <= cosine_similarity(v, v) <= 1.0

    @settings(max_examples=60)
    @given(
        arrays(np.float64, 6, elements=st.floats(-10, 10)),
        arrays(np.float64, 6, elements=st.floats(-10, 10)),
        st.floats(0.01, 100),
        st.floats(0.01, 100),
    )
    def test_symmetric_and_scale_invariant(self, a, b, alpha, beta):
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        s = cosine_similarity(a, b)
        assert s == pytest.approx(cosine_similarity(b, a), abs=1e-12)
        assert s == pytest.approx(cosine_similarity(alpha * a, beta * b), abs=1e-12)

    def test_pairwise_matches_scalar(self, rng):
        a, b = rng.standard_normal((4, 5)), rng.standard_normal((3, 5))
        m = pairwise_cosine(a, b)
        for i in range(4):
            for j in range(3):
                assert m[i, j] == pytest.approx(mp_cosine(a[i], b[j]), abs=1e-12)

    def test_pairwise_zero_rows_are_zero(self):
        m = pairwise_cosine(np.zeros((1, 3)), np.ones((2, 3)))
        assert np.array_equal(m, np.zeros((1, 2)))


class TestMeanPool:
    def test_kernel_one_is_identity(self, rng):
        s = rng.random(10)
        assert np.array_equal(mean_pool_1d(s, 1), s)

    def test_constant_input(self):
        np.testing.assert_allclose(mean_pool_1d(np.full(9, 2.5), 5), np.full(9, 2.5), rtol=1e-15)

    def test_hand_evaluated_truncated_edges(self):
        np.testing.assert_allclose(mean_pool_1d([0, 0, 9, 0, 0], 3), [0, 3, 3, 3, 0], atol=1e-15)

    @pytest.mark.parametrize("k", [0, -1, 2, 4])
    def test_even_or_nonpositive_kernel_rejected(self, k):
        with pytest.raises(InvalidArgumentError):
            mean_pool_1d([1.0, 2.0], k)

    def test_kernel_wider_than_input(self):
        np.testing.assert_allclose(mean_pool_1d([1.0, 2.0, 6.0], 9), [3.0, 3.0, 3.0])

    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 100)), st.sampled_from([1, 3, 5, 7, 9]))
    def test_matches_direct_window_oracle(self, s, k):
        np.testing.assert_allclose(mean_pool_1d(s, k), pool_oracle(s, k), rtol=1e-12, atol=1e-12)

    @given(st.lists(st.tuples(st.floats(0, 10), st.integers(3, 6)), min_size=2, max_size=5))
    def test_block_constant_sum_ordering(self, blocks):
        # blocks at least as wide as the kernel keep their ordering by level
        s = np.concatenate([np.full(w, lvl) for lvl, w in blocks])
        pooled = mean_pool_1d(s, 3)
        starts = np.cumsum([0] + [w for _, w in blocks[:-1]])
        centers = [st_ + w // 2 for st_, (_, w) in zip(starts, blocks)]
        levels = [lvl for lvl, _ in blocks]
        for i in range(len(blocks)):
            for j in range(len(blocks)):
                if levels[i] > levels[j]:
                    assert pooled[centers[i]] >= pooled[centers[j]]


class TestTopK:
    def test_ties_prefer_lower_index(self):
        assert top_k_indices(np.array([1.0, 3.0, 3.0, 2.0]), 2).tolist() == [1, 2]

    def test_k_zero(self):
        assert top_k_indices(np.array([1.0]), 0).size == 0
