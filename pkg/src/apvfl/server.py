"""Server-side aggregation: APV similarity weights, personalised mixing,
size-weighted averaging and the spectral gap of the mixing matrix."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParams
from .numerics import make_rng, power_iteration, softmax_row

log = logging.getLogger(__name__)

PHI_KEYS = ("clf.", "conv.")


@dataclass
class AggregationWeights:
    omega: np.ndarray
    alpha: float
    similarity: np.ndarray | None = None


def similarity_matrix(apvs) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise APV cosines and a mask of clients whose APV has zero norm."""
    A = np.asarray(apvs, dtype=np.float64)
    norms = np.linalg.norm(A, axis=1)
    bad = norms == 0
    U = A / np.where(bad, 1.0, norms)[:, None]
    S = np.clip(U @ U.T, -1.0, 1.0)
    S[bad, :] = 0.0
    S[:, bad] = 0.0
    return S, bad


def similarity_weights(apvs, alpha: float) -> AggregationWeights:
    """Row ``k`` is ``softmax_l(alpha * cos(a_k, a_l))``.

    A client with a zero APV gets a uniform row.
    """
    if alpha < 0:
        raise ValueError(f"temperature must be >= 0, got {alpha}")
    S, bad = similarity_matrix(apvs)
    K = len(S)
    if K == 0:
        raise ValueError("no clients to aggregate")
    omega = np.empty((K, K))
    for k in range(K):
        if bad[k]:
            log.warning("client %d uploaded a zero APV; using uniform weights", k)
            omega[k] = 1.0 / K
        else:
            omega[k] = softmax_row(S[k], alpha)
    return AggregationWeights(omega, float(alpha), S)


def _check_shapes(params: list[ModelParams]) -> None:
    ref = params[0].shapes()
    for i, p in enumerate(params[1:], 1):
        if p.shapes() != ref:
            raise ValueError(f"client {i} parameter shapes differ from client 0")


def mix(params: list[ModelParams], omega: np.ndarray, keys=None) -> list[ModelParams]:
    """``out_k = sum_l omega[k, l] * params_l`` for every named array in
    ``keys`` (all arrays when None); other arrays stay with their owner."""
    _check_shapes(params)
    omega = np.asarray(omega, dtype=np.float64)
    names = list(params[0].named())
    stacks = {n: np.stack([p.named()[n] for p in params]) for n in names}
    out = []
    for k in range(len(omega)):
        own = params[k].named()
        arrays = {}
        for n in names:
            if keys is None or n in keys:
                arrays[n] = np.tensordot(omega[k], stacks[n], axes=1)
            else:
                arrays[n] = np.array(own[n])
        out.append(ModelParams.from_named(arrays))
    return out


def personalized_aggregate(params: list[ModelParams], weights: AggregationWeights, mix_phi: bool = True) -> list[ModelParams]:
    keys = None
    if not mix_phi:
        keys = {n for n in params[0].named() if not n.startswith(PHI_KEYS)}
    return mix(params, weights.omega, keys)


def fedavg_weights(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes < 0) or sizes.sum() <= 0:
        raise ValueError("client sizes must be non-negative with a positive total")
    return sizes / sizes.sum()


def fedavg_aggregate(params: list[ModelParams], sizes) -> list[ModelParams]:
    """Size-weighted average broadcast to every client."""
    w = fedavg_weights(sizes)
    if len(w) != len(params):
        raise ValueError("one size per client required")
    avg = mix(params, w[None, :])[0]
    return [avg.copy() for _ in params]


def spectral_gap(omega: np.ndarray, iters: int = 20000, tol: float = 1e-13) -> float:
    """``|| omega - 11^T / K ||_2`` by power iteration on ``V^T V``."""
    omega = np.asarray(omega, dtype=np.float64)
    K = len(omega)
    V = omega - 1.0 / K
    G = V.T @ V
    if not np.any(G):
        return 0.0
    _, lam = power_iteration(G, iters, make_rng(0), tol=tol)
    return float(np.sqrt(max(lam, 0.0)))


def dump_matrix(m: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(m):
            w.writerow([repr(float(x)) for x in row])
