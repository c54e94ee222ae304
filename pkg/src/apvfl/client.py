"""Client-side local training: full-batch SGD on (GCN, classifier, APV)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import apvkernel as ak
from .graphdata import ClientSubgraph
from .model import ModelParams, backward, cross_entropy, forward, normalized_adjacency

MODES = ("fedaux", "fedaux_hard", "fedavg", "local")


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class ClientState:
    subgraph: ClientSubgraph
    params: ModelParams
    lr: float
    rng: np.random.Generator
    sigma: float = 1.0
    apv_renormalize: bool = False
    detach_z: bool = False
    a_hat: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.a_hat is None:
            self.a_hat = normalized_adjacency(self.subgraph.graph)

    def forward(self, params: ModelParams | None = None, hard: bool | None = None):
        p = self.params if params is None else params
        if hard is None:
            hard = p.conv_w is not None
        return forward(self.a_hat, self.subgraph.graph.features, p, self.sigma, hard)


@dataclass
class LocalStats:
    losses: list[float]
    train_acc: float
    val_acc: float
    test_acc: float


def _accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy over an empty mask")
    # np.argmax returns the first maximum, i.e. the lowest class id on ties
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


def evaluate(state: ClientState, mask: np.ndarray, params: ModelParams | None = None) -> float:
    return _accuracy(state.forward(params).logits, state.subgraph.graph.labels, mask)


def train_loss(state: ClientState, params: ModelParams | None = None) -> float:
    tr = state.forward(params)
    return cross_entropy(tr.logits, state.subgraph.graph.labels, state.subgraph.train_mask)[0]


def sgd_step(state: ClientState, params: ModelParams, hard: bool) -> tuple[ModelParams, float]:
    sub = state.subgraph
    tr = forward(state.a_hat, sub.graph.features, params, state.sigma, hard)
    loss, g_logits = cross_entropy(tr.logits, sub.graph.labels, sub.train_mask)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"client {sub.client_id}: loss is {loss}")
    grads = backward(tr, g_logits, params, detach_z=state.detach_z)
    new = ModelParams.from_named({k: v - state.lr * grads.named()[k] for k, v in params.named().items()})
    if state.apv_renormalize:
        nrm = np.linalg.norm(new.apv)
        if nrm > 0:
            new.apv = new.apv / nrm
    new.apv = ak.ensure_apv(new.apv, state.rng)
    return new, loss


def local_train(state: ClientState, Q: int, mode: str = "fedaux") -> tuple[ModelParams, LocalStats]:
    """``Q`` full-batch gradient steps from ``state.params``.

    Returns the updated parameters and per-step training losses (each taken
    before its update) plus accuracies of the updated model. ``state`` is
    left untouched.
    """
    if Q < 1:
        raise ValueError("need at least one local step")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    hard = mode == "fedaux_hard"
    params = state.params
    losses = []
    for _ in range(Q):
        params, loss = sgd_step(state, params, hard)
        losses.append(loss)
    tr = state.forward(params, hard)
    sub = state.subgraph
    y = sub.graph.labels
    acc = {
        name: (_accuracy(tr.logits, y, m) if m.any() else float("nan"))
        for name, m in (("train", sub.train_mask), ("val", sub.val_mask), ("test", sub.test_mask))
    }
    return params, LocalStats(losses, acc["train"], acc["val"], acc["test"])
