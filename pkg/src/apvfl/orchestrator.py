"""The federation loop: broadcast, local training, upload, aggregation."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graphdata as gd
from . import server
from .client import ClientState, LocalStats, NonFiniteLoss, evaluate, local_train, train_loss
from .config import FederationConfig
from .model import ModelParams, ModelShape, init_params, save_params
from .numerics import make_rng

log = logging.getLogger(__name__)

# fixed stream keys for the non-round random draws
_INIT, _SPLIT, _PART, _DATA = 1_000_001, 1_000_002, 1_000_003, 1_000_004


@dataclass
class RoundRecord:
    round: int
    train_loss: list[float]
    global_loss: list[float]
    val_acc: list[float]
    test_acc: list[float]
    test_sizes: list[int]
    rho: float
    wall_clock: float = 0.0

    @property
    def mean_test_acc(self) -> float:
        return float(np.mean(self.test_acc))

    @property
    def weighted_test_acc(self) -> float:
        w = np.asarray(self.test_sizes, dtype=np.float64)
        return float(np.dot(w, self.test_acc) / w.sum())

    @property
    def mean_global_loss(self) -> float:
        return float(np.mean(self.global_loss))


@dataclass
class FederationResult:
    config: FederationConfig
    records: list[RoundRecord]
    params: list[ModelParams]
    similarity: list[np.ndarray] = field(default_factory=list)
    omega: list[np.ndarray] = field(default_factory=list)
    clients: list[gd.ClientSubgraph] = field(default_factory=list)
    halted: str | None = None


def load_dataset(cfg: FederationConfig) -> tuple[gd.Graph, gd.Partition, int]:
    if cfg.dataset is not None:
        g = gd.load_graph(cfg.dataset)
        if cfg.partition is not None:
            part = gd.load_partition(cfg.partition)
            if len(part.assignment) != g.n:
                raise ValueError("partition length does not match the graph")
        else:
            part = gd.partition(g, cfg.num_clients, make_rng(cfg.seed, _PART))
        return g, part, cfg.num_clients
    g, part = gd.gen_sbm(cfg.sbm, make_rng(cfg.seed, _DATA))
    return g, part, cfg.sbm.blocks


def setup_clients(cfg: FederationConfig, g: gd.Graph, part: gd.Partition, k: int) -> list[gd.ClientSubgraph]:
    subs = gd.build_clients(g, part, k)
    return [gd.split(s, cfg.split, make_rng(cfg.seed, s.client_id, _SPLIT)) for s in subs]


def model_shape(cfg: FederationConfig, g: gd.Graph) -> ModelShape:
    return ModelShape(g.num_features, cfg.hidden, g.num_classes, cfg.layers, cfg.conv_width, cfg.mode == "fedaux_hard")


def _aggregate(cfg: FederationConfig, uploads: list[ModelParams], sizes):
    K = len(uploads)
    S, _ = server.similarity_matrix([p.apv for p in uploads])
    if cfg.mode in ("fedaux", "fedaux_hard"):
        w = server.similarity_weights([p.apv for p in uploads], cfg.alpha)
        return server.personalized_aggregate(uploads, w, cfg.mix_phi), w.omega, S
    if cfg.mode == "fedavg":
        row = server.fedavg_weights(sizes)
        return server.fedavg_aggregate(uploads, sizes), np.tile(row, (K, 1)), S
    return [p.copy() for p in uploads], np.eye(K), S


def run_federation(
    cfg: FederationConfig,
    graph: gd.Graph | None = None,
    part: gd.Partition | None = None,
    out_dir=None,
) -> FederationResult:
    """Run ``cfg.rounds`` rounds and return per-round records and the final
    personalised parameters. Writes CSV/JSON outputs when ``out_dir`` (or
    ``cfg.out_dir``) is set."""
    cfg.validate()
    if graph is None:
        graph, part, k = load_dataset(cfg)
    else:
        k = cfg.num_clients if part is None else part.num_parts
        if part is None:
            part = gd.partition(graph, k, make_rng(cfg.seed, _PART))
    clients = setup_clients(cfg, graph, part, k)
    shape = model_shape(cfg, graph)
    init = init_params(shape, make_rng(cfg.seed, _INIT))
    params = [init.copy() for _ in clients]
    states = [
        ClientState(c, params[i], cfg.lr, make_rng(cfg.seed, i, 0), cfg.sigma, cfg.apv_renormalize, cfg.detach_z)
        for i, c in enumerate(clients)
    ]
    sizes = [c.n for c in clients]
    out = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    result = FederationResult(cfg, [], params, clients=clients)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def train_one(i: int, t: int) -> tuple[ModelParams, LocalStats]:
        st = states[i]
        st.params = params[i]
        st.rng = make_rng(cfg.seed, i, t)
        return local_train(st, cfg.local_steps, cfg.mode)

    try:
        for t in range(1, cfg.rounds + 1):
            t0 = time.perf_counter()
            jobs = [(i, t) for i in range(len(states))]
            try:
                done = list(pool.map(lambda a: train_one(*a), jobs)) if pool else [train_one(*a) for a in jobs]
            except NonFiniteLoss as exc:
                log.error("round %d halted: %s", t, exc)
                result.halted = f"round {t}: {exc}"
                break
            uploads = [p for p, _ in done]
            stats = [s for _, s in done]
            params, omega, S = _aggregate(cfg, uploads, sizes)
            rho = server.spectral_gap(omega)
            g_loss = [train_loss(st, p) for st, p in zip(states, params)]
            val = [evaluate(st, st.subgraph.val_mask, p) if st.subgraph.val_mask.any() else float("nan") for st, p in zip(states, params)]
            test = [evaluate(st, st.subgraph.test_mask, p) if st.subgraph.test_mask.any() else float("nan") for st, p in zip(states, params)]
            rec = RoundRecord(
                t,
                [s.losses[-1] for s in stats],
                g_loss,
                val,
                test,
                [int(st.subgraph.test_mask.sum()) for st in states],
                rho,
                time.perf_counter() - t0,
            )
            result.records.append(rec)
            result.similarity.append(S)
            result.omega.append(omega)
            result.params = params
            if out is not None:
                server.dump_matrix(S, out / f"similarity_round_{t}.csv")
                server.dump_matrix(omega, out / f"omega_round_{t}.csv")
            if not np.isfinite(rec.mean_global_loss):
                result.halted = f"round {t}: non-finite aggregated loss"
                break
    finally:
        if pool:
            pool.shutdown()
        if out is not None:
            write_outputs(result, out)
    return result


def write_outputs(result: FederationResult, out: Path) -> None:
    with open(out / "rounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "client", "train_loss", "global_loss", "val_acc", "test_acc"])
        for r in result.records:
            for k in range(len(r.test_acc)):
                w.writerow([r.round, k, repr(r.train_loss[k]), repr(r.global_loss[k]), repr(r.val_acc[k]), repr(r.test_acc[k])])
    (out / "summary.json").write_text(json.dumps(summarize(result), indent=2, sort_keys=True))
    save_params(result.params, out / "checkpoint.json")
    with open(out / "timing.log", "w") as fh:
        for r in result.records:
            fh.write(f"round {r.round} {r.wall_clock:.6f}s\n")


def summarize(result: FederationResult) -> dict:
    recs = result.records
    last = recs[-1] if recs else None
    return {
        "config": result.config.to_dict(),
        "rounds_completed": len(recs),
        "halted": result.halted,
        "final_mean_test_acc": last.mean_test_acc if last else None,
        "final_weighted_test_acc": last.weighted_test_acc if last else None,
        "final_mean_val_acc": float(np.mean(last.val_acc)) if last else None,
        "global_loss": [r.mean_global_loss for r in recs],
        "mean_test_acc": [r.mean_test_acc for r in recs],
        "rho": [r.rho for r in recs],
    }


def run_seeds(cfg: FederationConfig, seeds: list[int], out_dir=None) -> dict:
    """Repeat a run over several seeds; mean and std of the final accuracy."""
    finals, summaries = [], {}
    base = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    for s in seeds:
        c = FederationConfig.from_dict({**cfg.to_dict(), "seed": s, "sbm": None if cfg.sbm is None else vars(cfg.sbm)})
        sub = base / f"seed_{s}" if base else None
        res = run_federation(c, out_dir=sub)
        summaries[str(s)] = summarize(res)
        finals.append(summaries[str(s)]["final_mean_test_acc"])
    doc = {
        "seeds": seeds,
        "final_mean_test_acc": finals,
        "mean": float(np.mean(finals)),
        "std": float(np.std(finals)),
    }
    if base:
        base.mkdir(parents=True, exist_ok=True)
        (base / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc
