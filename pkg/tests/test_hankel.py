"""Tests for block-Hankel construction and excitation checks."""

import numpy as np
import pytest

from ddtubempc.hankel import build_hankel, is_persistently_exciting


class TestBuildHankel:
    def test_scalar_depth_two(self):
        H = build_hankel(np.array([1.0, 2.0, 3.0, 4.0]), 2)
        np.testing.assert_allclose(H, [[1, 2, 3], [2, 3, 4]])

    def test_single_sample_depth_one(self):
        H = build_hankel(np.array([5.0]), 1)
        np.testing.assert_allclose(H, [[5.0]])

    def test_vector_sequence_stacking(self):
        seq = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        H = build_hankel(seq, 2)
        assert H.shape == (4, 2)
        np.testing.assert_allclose(H[:, 0], [1, 0, 0, 1])
        np.testing.assert_allclose(H[:, 1], [0, 1, 1, 1])

    def test_depth_exceeding_length_raises(self):
        with pytest.raises(ValueError):
            build_hankel(np.arange(3.0), 4)

    def test_nonpositive_depth_raises(self):
        with pytest.raises(ValueError):
            build_hankel(np.arange(3.0), 0)

    def test_columns_are_contiguous_windows(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            length = rng.integers(3, 30)
            m = rng.integers(1, 4)
            depth = rng.integers(1, length + 1)
            seq = rng.normal(size=(length, m))
            H = build_hankel(seq, depth)
            for j in range(length - depth + 1):
                np.testing.assert_allclose(H[:, j], seq[j : j + depth].ravel())

    def test_shift_drops_first_column_appends_new(self):
        rng = np.random.default_rng(1)
        seq = rng.normal(size=(12, 2))
        depth = 4
        H = build_hankel(seq[:-1], depth)
        H_shift = build_hankel(seq[1:], depth)
        np.testing.assert_allclose(H_shift[:, :-1], H[:, 1:])
        np.testing.assert_allclose(H_shift[:, -1], seq[-depth:].ravel())


class TestPersistencyOfExcitation:
    def test_constant_sequence_is_not_exciting(self):
        assert not is_persistently_exciting(np.ones(10), 2)

    def test_handworked_rank_example(self):
        seq = np.array([1.0, -1.0, 1.0, -1.0, 2.0])
        H = np.array([[1.0, -1.0, 1.0, -1.0], [-1.0, 1.0, -1.0, 2.0]])
        expected = np.linalg.matrix_rank(H) == 2
        assert is_persistently_exciting(seq, 2) == expected
        assert expected  # the last column breaks the rank-1 pattern

    def test_random_sequences_excite_order_15(self):
        rng = np.random.default_rng(42)
        hits = 0
        for _ in range(1000):
            seq = rng.normal(size=50)
            if is_persistently_exciting(seq, 15):
                hits += 1
        assert hits == 1000

    def test_too_short_sequence_returns_false(self):
        assert not is_persistently_exciting(np.arange(3.0), 5)

    def test_monotone_in_order(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            seq = rng.normal(size=(rng.integers(10, 40), rng.integers(1, 3)))
            flags = [
                is_persistently_exciting(seq, k) for k in range(1, 8)
            ]
            # once False, never True again at higher order
            for lo, hi in zip(flags, flags[1:]):
                assert lo or not hi

    def test_invalid_order_raises(self):
        with pytest.raises(ValueError):
            is_persistently_exciting(np.arange(5.0), 0)
