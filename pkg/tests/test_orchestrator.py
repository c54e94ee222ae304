import json

import numpy as np
import pytest

from apvfl import graphdata as gd
from apvfl.client import ClientState, local_train
from apvfl.config import ConfigError, FederationConfig, load_config
from apvfl.model import init_params
from apvfl.numerics import make_rng
from apvfl.orchestrator import _INIT, model_shape, run_federation, setup_clients

SMALL = gd.SbmConfig(nodes=240, blocks=4, groups=2)


def _cfg(**kw):
    base = dict(sbm=SMALL, num_clients=4, rounds=3, local_steps=2, hidden=8)
    base.update(kw)
    return FederationConfig(**base)


def _same(pa, pb):
    return all(np.array_equal(pa.named()[k], pb.named()[k]) for k in pa.named())


def test_local_mode_composes_rounds():
    cfg = _cfg(mode="local")
    res = run_federation(cfg)
    g, truth = gd.gen_sbm(SMALL, make_rng(cfg.seed, 1_000_004))
    clients = setup_clients(cfg, g, truth, 4)
    init = init_params(model_shape(cfg, g), make_rng(cfg.seed, _INIT))
    for k, c in enumerate(clients):
        p, _ = local_train(ClientState(c, init.copy(), cfg.lr, make_rng(0)), 6, "local")
        assert _same(p, res.params[k])


def test_single_client_fedaux_equals_local():
    one = gd.SbmConfig(nodes=120, blocks=1, groups=1)
    a = run_federation(_cfg(mode="fedaux", num_clients=1, sbm=one))
    b = run_federation(_cfg(mode="local", num_clients=1, sbm=one))
    assert _same(a.params[0], b.params[0])
    assert [r.global_loss for r in a.records] == [r.global_loss for r in b.records]
    assert all(np.array_equal(o, [[1.0]]) for o in a.omega)


def test_outputs_and_determinism(tmp_path):
    run_federation(_cfg(), out_dir=tmp_path / "a")
    run_federation(_cfg(workers=3), out_dir=tmp_path / "b")
    files = ["rounds.csv", "checkpoint.json", "similarity_round_3.csv", "omega_round_1.csv"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = (tmp_path / "a" / "rounds.csv").read_text().splitlines()
    assert rows[0] == "round,client,train_loss,global_loss,val_acc,test_acc"
    assert len(rows) == 1 + 3 * 4
    S = np.loadtxt(tmp_path / "a" / "similarity_round_2.csv", delimiter=",")
    assert S.shape == (4, 4)
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["rounds_completed"] == 3


def test_round_records_fields():
    res = run_federation(_cfg(mode="fedavg"))
    assert [r.round for r in res.records] == [1, 2, 3]
    for r in res.records:
        assert all(0 <= x <= 1 for x in r.test_acc + r.val_acc)
        assert 0 <= r.mean_test_acc <= 1 and 0 <= r.weighted_test_acc <= 1
        assert r.rho == pytest.approx(0.0, abs=1e-12)
    p = res.params
    assert all(_same(p[0], q) for q in p[1:])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_halts_and_flushes(tmp_path):
    res = run_federation(_cfg(lr=1e200, rounds=5), out_dir=tmp_path)
    assert res.halted is not None
    assert len(res.records) < 5
    assert (tmp_path / "rounds.csv").exists()


@pytest.mark.parametrize(
    "field, value",
    [("rounds", 0), ("local_steps", 0), ("lr", 0.0), ("sigma", -1.0), ("alpha", -0.1), ("num_clients", 0), ("mode", "x"), ("conv_width", 2)],
)
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        _cfg(**{field: value}).validate()


def test_config_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"rounds": 7, "lr": 0.2}))
    cfg = load_config(p, "citation-small", {"lr": 0.3, "seed": None})
    assert (cfg.rounds, cfg.local_steps, cfg.lr, cfg.alpha, cfg.sigma) == (7, 1, 0.3, 10.0, 1.0)
    with pytest.raises(ConfigError):
        load_config(None, "nope")
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(p)


def test_config_round_trip():
    cfg = _cfg(split=(0.5, 0.25, 0.25))
    again = FederationConfig.from_dict(json.loads(json.dumps({**cfg.to_dict(), "sbm": vars(cfg.sbm)})))
    assert again == cfg
