import math

import numpy as np
import pytest

from inrbo.errors import DimensionMismatch, NonPositiveDiagonal, NotPositiveDefinite, NotSymmetric
from inrbo.numerics import (cholesky, derive_seed, jitter_ladder, log_det_from_cholesky, make_rng,
                            min_eigenvalue, solve_cholesky)


def test_cholesky_identity_needs_no_jitter():
    low, delta = cholesky(np.eye(3))
    assert delta == 0.0
    np.testing.assert_array_equal(low, np.eye(3))


def test_cholesky_reconstructs_2x2():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    low, delta = cholesky(a)
    assert delta == 0.0
    assert np.allclose(low @ low.T, a, atol=1e-12, rtol=0)
    assert np.all(np.triu(low, 1) == 0)


def test_cholesky_rejects_indefinite():
    # eigenvalues 3 and -1
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), jitter_max=1e-4)


def test_cholesky_rejects_asymmetric_and_non_square():
    with pytest.raises(NotSymmetric):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_cholesky_uses_smallest_sufficient_jitter():
    # rank-one matrix: singular, needs a positive jitter
    v = np.array([1.0, 2.0, 3.0])
    low, delta = cholesky(np.outer(v, v), jitter_max=1e-4)
    assert delta in jitter_ladder(1e-4) and delta > 0
    assert np.allclose(low @ low.T, np.outer(v, v) + delta * np.eye(3), atol=1e-12)


def test_jitter_ladder_decades():
    assert jitter_ladder(1e-4) == [0.0, 1e-10, 1e-8, 1e-6, 1e-4]


@pytest.mark.parametrize("seed", range(5))
def test_cholesky_random_spd(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 65))
    m = rng.standard_normal((n, n))
    a = m.T @ m + np.eye(n)
    low, _ = cholesky(a)
    assert np.max(np.abs(low @ low.T - a)) < 1e-10 * np.max(np.abs(a))
    x = rng.standard_normal(n)
    back = solve_cholesky(low, a @ x)
    assert np.linalg.norm(back - x) <= 1e-9 * np.linalg.norm(x)


def test_solve_identity_and_2x2_inverse():
    np.testing.assert_array_equal(solve_cholesky(np.eye(3), np.array([1.0, 2.0, 3.0])), [1, 2, 3])
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    low, _ = cholesky(a)
    inv = np.array([[3.0, -2.0], [-2.0, 4.0]]) / 8.0  # closed-form 2x2 inverse, det 8
    assert np.allclose(solve_cholesky(low, np.array([1.0, 0.0])), inv[:, 0], atol=1e-12, rtol=0)


def test_solve_rejects_wrong_length():
    with pytest.raises(DimensionMismatch):
        solve_cholesky(np.eye(3), np.ones(2))


def test_log_det():
    assert log_det_from_cholesky(np.eye(4)) == 0.0
    assert math.isclose(log_det_from_cholesky(np.diag([2.0, 2.0])), math.log(16.0))
    with pytest.raises(NonPositiveDiagonal):
        log_det_from_cholesky(np.diag([1.0, 0.0]))


def test_min_eigenvalue():
    assert math.isclose(min_eigenvalue(np.eye(3)), 1.0)
    assert math.isclose(min_eigenvalue(np.array([[1.0, 2.0], [2.0, 1.0]])), -1.0)
    assert math.isclose(min_eigenvalue(np.diag([5.0, 0.5, 3.0])), 0.5)
    with pytest.raises(DimensionMismatch):
        min_eigenvalue(np.ones((2, 3)))


def test_rng_same_seed_same_stream():
    a = make_rng(42).random(10_000)
    b = make_rng(42).random(10_000)
    np.testing.assert_array_equal(a, b)


def test_rng_substreams_uncorrelated():
    a = make_rng(42, 0).standard_normal(10_000)
    b = make_rng(42, 1).standard_normal(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert make_rng(42, 1, 7).random() == make_rng(42, 1, 7).random()


def test_derive_seed_stable_and_distinct():
    assert derive_seed(3, 1, 5) == derive_seed(3, 1, 5)
    assert derive_seed(3, 1, 5) != derive_seed(3, 1, 6)
    assert 0 <= derive_seed(3, 1, 5) < 2 ** 63
