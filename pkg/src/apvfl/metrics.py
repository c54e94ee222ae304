"""Non-IIDness of a client partition: label-prior JSD plus embedding MMD."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graphdata import Graph, Partition, build_clients


@dataclass
class NonIidReport:
    jsd: float
    mmd: float
    xi: float
    priors: list[list[float]]
    num_clients: int

    def to_dict(self) -> dict:
        return asdict(self)


def label_priors(labels_per_client, num_classes: int) -> np.ndarray:
    rows = []
    for y in labels_per_client:
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise ValueError("client with no nodes")
        rows.append(np.bincount(y, minlength=num_classes) / len(y))
    return np.array(rows)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def jsd(labels_per_client, num_classes: int | None = None) -> float:
    """Mean Jensen-Shannon divergence (natural log) between each client's
    label prior and the pooled prior."""
    labels_per_client = [np.asarray(y, dtype=np.int64) for y in labels_per_client]
    if num_classes is None:
        num_classes = int(max(y.max() for y in labels_per_client)) + 1
    P = label_priors(labels_per_client, num_classes)
    pooled = np.concatenate(labels_per_client)
    glob = np.bincount(pooled, minlength=num_classes) / len(pooled)
    vals = []
    for pk in P:
        r = 0.5 * (pk + glob)
        vals.append(0.5 * (_kl(pk, r) + _kl(glob, r)))
    return float(np.mean(vals))


def neighbor_embeddings(g: Graph) -> np.ndarray:
    """``(A + I) X`` with the raw adjacency."""
    return (g.adjacency() + np.eye(g.n)) @ g.features


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    return np.maximum(d2, 0.0)


def median_bandwidth(X: np.ndarray) -> float:
    iu = np.triu_indices(len(X), k=1)
    d = np.sqrt(_sq_dists(X)[iu])
    med = float(np.median(d)) if len(d) else 0.0
    return med if med > 0 else 1.0


def mmd(embeddings, bandwidth: float | None = None) -> float:
    """Mean pairwise squared MMD between client embedding sets.

    Gaussian kernel ``exp(-||x - y||^2 / (2 b^2))``; ``b`` defaults to the
    median pairwise distance of the pooled sample. Uses the biased
    (V-statistic) estimate ``mean K_kk + mean K_ll - 2 mean K_kl``.
    """
    embeddings = [np.asarray(z, dtype=np.float64) for z in embeddings]
    K = len(embeddings)
    if K < 2:
        raise ValueError("MMD needs at least two clients")
    pooled = np.concatenate(embeddings)
    b = median_bandwidth(pooled) if bandwidth is None else float(bandwidth)
    kern = np.exp(-_sq_dists(pooled) / (2.0 * b * b))
    bounds = np.cumsum([0] + [len(z) for z in embeddings])
    means = np.empty((K, K))
    for k in range(K):
        for l in range(k, K):
            blk = kern[bounds[k] : bounds[k + 1], bounds[l] : bounds[l + 1]]
            means[k, l] = means[l, k] = blk.mean()
    total = 0.0
    for k in range(K):
        for l in range(k + 1, K):
            total += max(means[k, k] + means[l, l] - 2.0 * means[k, l], 0.0)
    return 2.0 * total / (K * (K - 1))


def xi(g: Graph, part: Partition, num_parts: int | None = None) -> NonIidReport:
    clients = build_clients(g, part, num_parts)
    labels = [c.graph.labels for c in clients]
    j = jsd(labels, g.num_classes)
    m = mmd([neighbor_embeddings(c.graph) for c in clients])
    return NonIidReport(j, m, j + m, label_priors(labels, g.num_classes).tolist(), len(clients))
