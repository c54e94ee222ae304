import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from apvfl.numerics import cosine, make_rng, matmul, power_iteration, softmax_row
from oracles import jacobi_eigh, matmul_loops

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)
nonzero = arrays(np.float64, st.integers(1, 8), elements=st.floats(-100, 100)).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_matmul_identity_and_orthogonal():
    assert np.array_equal(matmul(np.eye(2), np.array([[1.0, 2], [3, 4]])), [[1, 2], [3, 4]])
    assert np.array_equal(matmul(np.array([[1.0, 0]]), np.array([[0.0], [5]])), [[0.0]])


def test_matmul_matches_triple_loop(rng):
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(matmul(A, B), matmul_loops(A.tolist(), B.tolist()), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_examples():
    np.testing.assert_allclose(softmax_row([1, 1, 1], 10), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax_row([5.0, -2.0, 7.0], 0), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax_row([0, math.log(3)], 1), [0.25, 0.75], atol=1e-15)
    with pytest.raises(ValueError):
        softmax_row([], 1.0)


@given(vectors, st.floats(0, 50), finite)
def test_softmax_normalised_and_shift_invariant(v, scale, c):
    p = softmax_row(v, scale)
    assert np.all(p > 0) or scale * (v.max() - v.min()) > 700
    assert abs(p.sum() - 1) <= 1e-12
    np.testing.assert_allclose(softmax_row(v + c, scale), p, atol=1e-9)


def test_cosine_examples():
    assert cosine([3, 4], [3, 4]) == pytest.approx(1.0, abs=1e-15)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


@given(nonzero, st.floats(1e-3, 1e3), st.data())
def test_cosine_properties(u, c, data):
    v = data.draw(arrays(np.float64, len(u), elements=st.floats(-100, 100)).filter(lambda x: np.linalg.norm(x) > 1e-3))
    assert abs(cosine(u, u) - 1) <= 1e-12
    assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-15)
    assert cosine(c * u, v) == pytest.approx(cosine(u, v), abs=1e-12)
    assert -1 <= cosine(u, v) <= 1


def test_power_iteration_diagonal():
    v, lam = power_iteration(np.diag([2.0, 1.0]), 500, make_rng(1))
    np.testing.assert_allclose(v, [1, 0], atol=1e-12)
    assert lam == pytest.approx(2.0, abs=1e-12)


def test_power_iteration_degenerate_identity():
    v, lam = power_iteration(np.eye(3), 10, make_rng(2))
    assert lam == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


def test_power_iteration_matches_jacobi(rng):
    X = rng.standard_normal((5, 5))
    C = X @ X.T + 0.1 * np.eye(5)
    lam_ref, V = jacobi_eigh(C)
    v, lam = power_iteration(C, 20000, make_rng(3), tol=1e-16)
    assert lam == pytest.approx(lam_ref.max(), abs=1e-8)
    u = V[:, np.argmax(lam_ref)]
    assert abs(abs(u @ v) - 1) < 1e-6
    assert v[np.argmax(np.abs(v))] > 0


def test_power_iteration_non_square():
    with pytest.raises(ValueError):
        power_iteration(np.ones((2, 3)))


@given(st.integers(0, 2**31), st.integers(2, 6))
def test_rayleigh_quotient_non_decreasing(seed, n):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, n))
    hist: list[float] = []
    power_iteration(X @ X.T + 1e-3 * np.eye(n), 50, make_rng(seed), history=hist)
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(hist, hist[1:]))


def test_rng_substreams_reproducible_and_distinct():
    a = make_rng(7, 1, 2).standard_normal(4)
    assert np.array_equal(a, make_rng(7, 1, 2).standard_normal(4))
    assert not np.array_equal(a, make_rng(7, 2, 1).standard_normal(4))
