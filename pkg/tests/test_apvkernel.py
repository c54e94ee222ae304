import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from apvfl import apvkernel as ak
from apvfl.numerics import make_rng
from oracles import smooth_loops

scores = arrays(np.float64, st.integers(1, 10), elements=st.floats(-5, 5))


def _unit(x):
    return x / np.linalg.norm(x)


def _instance(seed):
    r = make_rng(seed, 77)
    n, d = int(r.integers(2, 9)), int(r.integers(2, 7))
    return r.standard_normal((n, d)), ak.init_apv(d, r), r.standard_normal((n, d)), float(r.uniform(0.5, 2))


def test_project_scores_examples():
    np.testing.assert_allclose(ak.project_scores(np.eye(2), np.array([1.0, 0])), [1, 0])
    np.testing.assert_allclose(ak.project_scores(np.array([[2.0, 0], [1, 0]]), np.array([0.0, 1])), [0, 0])
    np.testing.assert_allclose(ak.project_scores(np.array([[2.0, 0], [0, 1]]), np.array([1.0, 1])), [1, 0.5])
    assert np.all(ak.project_scores(np.zeros((3, 2)), np.ones(2)) == 0)


def test_kernel_examples():
    K, M = ak.kernel_matrix([0.4, 0.4, 0.4], 0.7)
    assert np.array_equal(K, np.ones((3, 3))) and np.array_equal(M, [3, 3, 3])
    K, _ = ak.kernel_matrix([0, 1], 1.0)
    assert K[0, 1] == pytest.approx(math.exp(-1), abs=1e-16)
    K, _ = ak.kernel_matrix(0.1 * np.arange(6), 1e-3)
    assert np.all(K[~np.eye(6, dtype=bool)] <= math.exp(-1e4))
    with pytest.raises(ValueError):
        ak.kernel_matrix([0, 1], 0.0)


@given(scores, st.floats(1e-2, 10), st.floats(-10, 10))
def test_kernel_symmetric_unit_diagonal_shift_invariant(s, sigma, c):
    K, M = ak.kernel_matrix(s, sigma)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1)
    assert np.all((K >= 0) & (K <= 1)) and np.all(M >= 1)
    K2, _ = ak.kernel_matrix(s + c, sigma)
    np.testing.assert_allclose(K2, K, atol=1e-9)


def test_smooth_examples(rng):
    H = rng.standard_normal((1, 3))
    K, M = ak.kernel_matrix([0.2], 1.0)
    np.testing.assert_array_equal(ak.smooth_aggregate(K, M, H), H)
    H = rng.standard_normal((4, 3))
    K, M = ak.kernel_matrix(np.zeros(4), 1.0)
    np.testing.assert_allclose(ak.smooth_aggregate(K, M, H), np.tile(H.mean(0), (4, 1)), atol=1e-15)
    H = rng.standard_normal((3, 2))
    s = rng.standard_normal(3)
    K, M = ak.kernel_matrix(s, 0.8)
    np.testing.assert_allclose(ak.smooth_aggregate(K, M, H), smooth_loops(H, s, 0.8), atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.05, 5))
def test_smoothed_rows_are_convex_combinations(seed, sigma):
    H, a, _, _ = _instance(seed)
    Z = ak.kernel_forward(H, a, sigma).Z
    assert np.all(Z >= H.min(0) - 1e-12) and np.all(Z <= H.max(0) + 1e-12)


@pytest.mark.parametrize("sigma", [1e-2, 1e-3])
def test_small_bandwidth_pointwise_limit(sigma):
    from apvfl.theory import spaced_scores_embeddings

    for seed in range(5):
        H, a = spaced_scores_embeddings(7, 4, 0.1, make_rng(seed))
        Z = ak.kernel_forward(H, a, sigma, "sphere").Z
        assert np.linalg.norm(Z - H) < 1e-12


def test_hard_sort_examples():
    assert ak.hard_sort([0.3, 0.1, 0.2]).tolist() == [1, 2, 0]
    assert ak.hard_sort([1, 2, 3]).tolist() == [0, 1, 2]
    assert ak.hard_sort([0.5, 0.5]).tolist() == [0, 1]
    H = np.arange(6.0).reshape(3, 2)
    assert ak.gather(H, np.array([2, 0, 1])).tolist() == [[4, 5], [0, 1], [2, 3]]


@given(scores)
def test_hard_sort_permutation(s):
    pi = ak.hard_sort(s)
    assert sorted(pi.tolist()) == list(range(len(s)))
    assert np.all(np.diff(s[pi]) >= 0)


def test_grad_score_examples(rng):
    a = _unit(rng.standard_normal(3))
    h = rng.standard_normal(3)
    h -= (h @ a) * a
    np.testing.assert_allclose(ak.grad_score(h, h @ a, a), h, atol=1e-15)
    np.testing.assert_allclose(ak.grad_score(a, 1.0, a), 0, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_grad_score_matches_fd(seed):
    H, a, _, _ = _instance(seed)
    fd = ak.finite_difference(lambda x: float(H[0] @ _unit(x)), a)
    assert np.max(np.abs(ak.grad_score(H[0], H[0] @ a, a) - fd)) < 1e-6


def test_grad_kernel_entry_zero_cases(rng):
    h = rng.standard_normal((2, 3))
    a = _unit(rng.standard_normal(3))
    assert np.all(ak.grad_kernel_entry(0.2, 0.2, h[0], h[1], a, 1.0) == 0)
    assert np.all(ak.grad_kernel_entry(0.2, 0.2, h[0], h[0], a, 1.0) == 0)


@pytest.mark.parametrize("seed", range(20))
def test_grad_kernel_entry_matches_fd(seed):
    H, a, _, sigma = _instance(seed)
    f = lambda x: float(np.exp(-(((H[0] - H[1]) @ _unit(x)) ** 2) / sigma**2))
    g = ak.grad_kernel_entry(H[0] @ a, H[1] @ a, H[0], H[1], a, sigma)
    assert ak.relative_error(g, ak.finite_difference(f, a)) <= 1e-5


def test_grad_apv_trivial_cases(rng):
    H, a, G, sigma = _instance(3)
    assert np.all(ak.grad_apv_loss(H, a, sigma, np.zeros_like(G)) == 0)
    Hc = np.tile(rng.standard_normal(3), (4, 1))
    assert np.allclose(ak.grad_apv_loss(Hc, _unit(np.ones(3)), 1.0, rng.standard_normal((4, 3))), 0, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_grad_apv_matches_fd(seed):
    H, a, G, sigma = _instance(seed)
    c = ak.score_scale(H)
    f = lambda x: float((G * ak.kernel_forward(H, x, sigma, scale=c).Z).sum())
    assert ak.relative_error(ak.grad_apv_loss(H, a, sigma, G), ak.finite_difference(f, a)) <= 1e-5
    f = lambda x: float((G * ak.kernel_forward(H, _unit(x), sigma, "sphere").Z).sum())
    assert ak.relative_error(ak.grad_apv_loss(H, a, sigma, G, "sphere"), ak.finite_difference(f, a)) <= 1e-5


def test_grad_h_trivial_and_uniform_limit(rng):
    H, a, G, sigma = _instance(4)
    assert np.all(ak.grad_h_through_kernel(H, a, sigma, np.zeros_like(G)) == 0)
    g = ak.grad_h_through_kernel(H, a, 1e6, G)
    np.testing.assert_allclose(g, np.tile(G.mean(0), (len(G), 1)), atol=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_grad_h_matches_fd(seed):
    H, a, G, sigma = _instance(seed)
    c = ak.score_scale(H)
    f = lambda x: float((G * ak.kernel_forward(x, a, sigma, scale=c).Z).sum())
    assert ak.relative_error(ak.grad_h_through_kernel(H, a, sigma, G), ak.finite_difference(f, H)) <= 1e-5


def test_ensure_apv_reinitialises(rng):
    a = np.array([3.0, 4.0])
    assert ak.ensure_apv(a, rng) is a
    b = ak.ensure_apv(np.zeros(4), rng)
    assert np.linalg.norm(b) == pytest.approx(1.0)
    c = ak.ensure_apv(np.array([np.nan, 1.0]), rng)
    assert np.all(np.isfinite(c))
