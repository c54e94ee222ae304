import math

import numpy as np
import pytest

from apvfl import graphdata as gd
from apvfl.client import ClientState, LocalStats, _accuracy, evaluate, local_train, sgd_step, train_loss
from apvfl.model import ModelShape, backward, cross_entropy, forward, init_params
from apvfl.numerics import make_rng


def _state(seed=0, n=30, lr=0.1, hard=False, separable=False):
    r = make_rng(seed, 9)
    if separable:
        y = np.repeat([0, 1], n // 2)
        X = np.c_[2.0 * y - 1 + 0.1 * r.standard_normal(n), r.standard_normal(n)]
        edges = [(i, i + 1) for i in range(n - 1) if y[i] == y[i + 1]]
    else:
        y = r.integers(0, 3, n)
        X = r.standard_normal((n, 4))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if r.random() < 0.15]
    g = gd.Graph(n, edges, X, y, int(y.max()) + 1)
    sub = gd.split(gd.ClientSubgraph(0, np.arange(n), g), (0.5, 0.25, 0.25), make_rng(seed, 1))
    p = init_params(ModelShape(g.num_features, 8, g.num_classes, 2, 3, hard), make_rng(seed, 2))
    return ClientState(sub, p, lr, make_rng(seed, 3))


def test_zero_learning_rate_is_identity():
    st = _state(lr=0.0)
    params, stats = local_train(st, 4)
    assert all(np.array_equal(params.named()[k], st.params.named()[k]) for k in params.named())
    assert len(set(stats.losses)) == 1


def test_single_step_matches_manual_update():
    st = _state()
    params, stats = local_train(st, 1)
    sub = st.subgraph
    tr = forward(st.a_hat, sub.graph.features, st.params, st.sigma)
    loss, gl = cross_entropy(tr.logits, sub.graph.labels, sub.train_mask)
    grads = backward(tr, gl, st.params).named()
    for k, v in st.params.named().items():
        np.testing.assert_array_equal(params.named()[k], v - st.lr * grads[k])
    assert stats.losses == [loss]


def test_state_not_mutated():
    st = _state()
    before = {k: v.copy() for k, v in st.params.named().items()}
    local_train(st, 3)
    assert all(np.array_equal(before[k], v) for k, v in st.params.named().items())


def test_separable_subgraph_learns_below_chance():
    st = _state(separable=True, lr=0.5)
    params, _ = local_train(st, 50)
    assert train_loss(st, params) < math.log(2)


@pytest.mark.parametrize("mode", ["fedaux", "fedaux_hard"])
def test_loss_decreases_first_five_steps(mode):
    g, truth = gd.gen_sbm(gd.SbmConfig(nodes=600, blocks=4, groups=2), make_rng(0))
    for sub in gd.build_clients(g, truth):
        sub = gd.split(sub, (0.2, 0.4, 0.4), make_rng(0, sub.client_id))
        p = init_params(ModelShape(g.num_features, 16, g.num_classes, 2, 3, mode == "fedaux_hard"), make_rng(1))
        _, stats = local_train(ClientState(sub, p, 0.1, make_rng(2)), 6, mode)
        assert all(b < a for a, b in zip(stats.losses[:5], stats.losses[1:6]))


def test_local_train_deterministic():
    a, _ = local_train(_state(seed=4), 3)
    b, _ = local_train(_state(seed=4), 3)
    assert all(np.array_equal(a.named()[k], b.named()[k]) for k in a.named())


def test_local_train_validation():
    st = _state()
    with pytest.raises(ValueError):
        local_train(st, 0)
    with pytest.raises(ValueError):
        local_train(st, 1, "nope")
    with pytest.raises(ValueError):
        _state(lr=-1.0)


def test_accuracy_examples(rng):
    y = rng.integers(0, 4, 20)
    mask = np.ones(20, bool)
    assert _accuracy(np.eye(4)[y] * 3, y, mask) == 1.0
    assert _accuracy(np.zeros((20, 4)), y, mask) == pytest.approx(np.mean(y == 0))
    logits = rng.standard_normal((20, 4))
    m = rng.random(20) < 0.5
    m[0] = True
    brute = sum(int(np.argmax(logits[i]) == y[i]) for i in range(20) if m[i]) / m.sum()
    assert _accuracy(logits, y, m) == pytest.approx(brute)
    with pytest.raises(ValueError):
        _accuracy(logits, y, np.zeros(20, bool))


def test_evaluate_in_unit_interval():
    st = _state()
    acc = evaluate(st, st.subgraph.test_mask)
    assert 0.0 <= acc <= 1.0
    with pytest.raises(ValueError):
        evaluate(st, np.zeros(st.subgraph.n, bool))


def test_stats_shape():
    _, stats = local_train(_state(), 3)
    assert isinstance(stats, LocalStats) and len(stats.losses) == 3
    assert all(0 <= x <= 1 for x in (stats.train_acc, stats.val_acc, stats.test_acc))


def test_apv_renormalize_flag():
    st = _state()
    st.apv_renormalize = True
    p, _ = sgd_step(st, st.params, False)
    assert np.linalg.norm(p.apv) == pytest.approx(1.0, abs=1e-12)
