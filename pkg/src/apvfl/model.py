"""GCN encoder, kernel-smoothed (or hard-sorted Conv1D) branch, concatenated
MLP classifier, cross-entropy, and the matching manual backward pass."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import apvkernel as ak
from .graphdata import Graph


@dataclass(frozen=True)
class ModelShape:
    in_dim: int
    hidden: int
    num_classes: int
    layers: int = 2
    conv_width: int = 3
    hard: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one GCN layer")
        if self.hard and self.conv_width % 2 == 0:
            raise ValueError(f"Conv1D width must be odd, got {self.conv_width}")


@dataclass
class ModelParams:
    """Everything a client trains: GCN weights, APV, classifier and
    (hard-sort mode only) the Conv1D kernel ``conv_w[tau + B//2]``."""

    gcn: list[np.ndarray]
    apv: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    conv_w: np.ndarray | None = None
    conv_b: np.ndarray | None = None

    def named(self) -> dict[str, np.ndarray]:
        out = {f"gcn.{i}": w for i, w in enumerate(self.gcn)}
        out.update({"apv": self.apv, "clf.w1": self.w1, "clf.b1": self.b1, "clf.w2": self.w2, "clf.b2": self.b2})
        if self.conv_w is not None:
            out["conv.w"] = self.conv_w
            out["conv.b"] = self.conv_b
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        n = sum(1 for k in arrays if k.startswith("gcn."))
        return cls(
            gcn=[np.asarray(arrays[f"gcn.{i}"], dtype=np.float64) for i in range(n)],
            apv=np.asarray(arrays["apv"], dtype=np.float64),
            w1=np.asarray(arrays["clf.w1"], dtype=np.float64),
            b1=np.asarray(arrays["clf.b1"], dtype=np.float64),
            w2=np.asarray(arrays["clf.w2"], dtype=np.float64),
            b2=np.asarray(arrays["clf.b2"], dtype=np.float64),
            conv_w=None if "conv.w" not in arrays else np.asarray(arrays["conv.w"], dtype=np.float64),
            conv_b=None if "conv.b" not in arrays else np.asarray(arrays["conv.b"], dtype=np.float64),
        )

    def map(self, fn) -> "ModelParams":
        return ModelParams.from_named({k: fn(v) for k, v in self.named().items()})

    def copy(self) -> "ModelParams":
        return self.map(np.array)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.named().items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.named().values()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.named().values())


def _glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def init_params(shape: ModelShape, rng: np.random.Generator) -> ModelParams:
    d = shape.hidden
    dims = [shape.in_dim] + [d] * shape.layers
    gcn = [_glorot(rng, dims[i], dims[i + 1]) for i in range(shape.layers)]
    apv = ak.init_apv(d, rng)
    w1 = _glorot(rng, 2 * d, d)
    w2 = _glorot(rng, d, shape.num_classes)
    p = ModelParams(gcn, apv, w1, np.zeros(d), w2, np.zeros(shape.num_classes))
    if shape.hard:
        p.conv_w = _glorot(rng, d, d, (shape.conv_width, d, d))
        p.conv_b = np.zeros(d)
    return p


# ---------------------------------------------------------------- forward


def normalized_adjacency(g: Graph) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` as a dense matrix."""
    a = g.adjacency() + np.eye(g.n)
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


@dataclass
class ForwardTrace:
    a_hat: np.ndarray
    inputs: list[np.ndarray]  # A_hat @ H_l for each layer
    pre: list[np.ndarray]
    H: np.ndarray
    kernel: ak.KernelArtifacts | None
    perm: np.ndarray | None
    Z: np.ndarray
    R: np.ndarray
    U: np.ndarray
    V: np.ndarray
    logits: np.ndarray
    hard_inputs: np.ndarray | None = field(default=None)


def gcn_forward(a_hat: np.ndarray, X: np.ndarray, params: ModelParams) -> tuple[np.ndarray, list, list]:
    """``H_{l+1} = ReLU(A_hat H_l W_l)``; the last layer stays linear."""
    h = X
    inputs, pre = [], []
    last = len(params.gcn) - 1
    for i, w in enumerate(params.gcn):
        ah = a_hat @ h
        p = ah @ w
        inputs.append(ah)
        pre.append(p)
        h = np.maximum(p, 0.0) if i < last else p
    return h, inputs, pre


def _shift(x: np.ndarray, tau: int) -> np.ndarray:
    # row t of the result is x[t + tau], zero outside the sequence
    out = np.zeros_like(x)
    n = len(x)
    if tau >= 0:
        out[: max(n - tau, 0)] = x[tau:]
    else:
        out[-tau:] = x[: n + tau]
    return out


def conv1d(Hs: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded 1-D convolution along rows: ``z_t = sum_tau W_tau h_{t+tau} + b``."""
    B = W.shape[0]
    if B % 2 == 0:
        raise ValueError(f"Conv1D width must be odd, got {B}")
    r = B // 2
    out = np.tile(b, (len(Hs), 1)).astype(np.float64)
    for j in range(B):
        out += _shift(Hs, j - r) @ W[j].T
    return out


def _conv1d_backward(Hs, W, gZ):
    r = W.shape[0] // 2
    gW = np.zeros_like(W)
    gH = np.zeros_like(Hs)
    for j in range(W.shape[0]):
        tau = j - r
        gW[j] = gZ.T @ _shift(Hs, tau)
        gH += _shift(gZ @ W[j], -tau)
    return gH, gW, gZ.sum(axis=0)


def classify(H: np.ndarray, Z: np.ndarray, params: ModelParams) -> np.ndarray:
    return _classify(H, Z, params)[-1]


def _classify(H, Z, params):
    R = np.concatenate([H, Z], axis=1)
    U = R @ params.w1 + params.b1
    V = np.maximum(U, 0.0)
    return R, U, V, V @ params.w2 + params.b2


def forward(
    a_hat: np.ndarray,
    X: np.ndarray,
    params: ModelParams,
    sigma: float = 1.0,
    hard: bool = False,
    scale: float | None = None,
) -> ForwardTrace:
    """Full forward pass. ``scale`` pins the score max-norm factor."""
    H, inputs, pre = gcn_forward(a_hat, X, params)
    c = ak.score_scale(H) if scale is None else scale
    if hard:
        s = c * (H @ params.apv)
        pi = ak.hard_sort(s)
        Hs = ak.gather(H, pi)
        Z = np.empty_like(H)
        Z[pi] = conv1d(Hs, params.conv_w, params.conv_b)
        art = None
    else:
        art = ak.kernel_forward(H, params.apv, sigma, scale=c)
        pi, Hs, Z = None, None, art.Z
    R, U, V, logits = _classify(H, Z, params)
    return ForwardTrace(a_hat, inputs, pre, H, art, pi, Z, R, U, V, logits, Hs)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax NLL over ``mask`` and its gradient w.r.t. the logits."""
    mask = np.asarray(mask, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("cross-entropy over an empty mask")
    x = logits[mask]
    x = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(x).sum(axis=1))
    y = np.asarray(labels)[mask]
    rows = np.arange(m)
    loss = float(np.mean(logz - x[rows, y]))
    p = np.exp(x - logz[:, None])
    p[rows, y] -= 1.0
    grad = np.zeros_like(logits, dtype=np.float64)
    grad[mask] = p / m
    return loss, grad


# ---------------------------------------------------------------- backward


def backward(trace: ForwardTrace, grad_logits: np.ndarray, params: ModelParams, detach_z: bool = False) -> ModelParams:
    """Gradients of the loss for every parameter of ``params``.

    With ``detach_z`` the smoothed branch is treated as a constant input to
    the classifier, which leaves the APV with a zero gradient.
    """
    d = trace.H.shape[1]
    g_w2 = trace.V.T @ grad_logits
    g_b2 = grad_logits.sum(axis=0)
    g_u = (grad_logits @ params.w2.T) * (trace.U > 0)
    g_w1 = trace.R.T @ g_u
    g_b1 = g_u.sum(axis=0)
    g_r = g_u @ params.w1.T
    g_h = g_r[:, :d].copy()
    g_z = g_r[:, d:]

    g_apv = np.zeros_like(params.apv)
    g_cw = g_cb = None
    if trace.perm is not None:
        # hard-sort branch: the permutation is piecewise constant in the APV
        pi = trace.perm
        g_hs, g_cw, g_cb = _conv1d_backward(trace.hard_inputs, params.conv_w, g_z[pi])
        if not detach_z:
            g_h[pi] += g_hs
        else:
            g_cw = np.zeros_like(params.conv_w)
            g_cb = np.zeros_like(params.conv_b)
    elif not detach_z:
        art = trace.kernel
        g_h += ak.grad_h_through_kernel(trace.H, params.apv, art.sigma, g_z, art=art)
        g_apv = ak.grad_apv_loss(trace.H, params.apv, art.sigma, g_z, art=art)

    g_gcn = [None] * len(params.gcn)
    g = g_h
    last = len(params.gcn) - 1
    for i in range(last, -1, -1):
        gp = g if i == last else g * (trace.pre[i] > 0)
        g_gcn[i] = trace.inputs[i].T @ gp
        if i:
            g = trace.a_hat.T @ (gp @ params.gcn[i].T)

    return ModelParams(g_gcn, g_apv, g_w1, g_b1, g_w2, g_b2, g_cw, g_cb)


# ---------------------------------------------------------------- checkpoints


def params_to_dict(p: ModelParams) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in p.named().items()}


def params_from_dict(doc: dict) -> ModelParams:
    return ModelParams.from_named({k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc.items()})


def save_params(p: ModelParams | list[ModelParams], path) -> None:
    doc = [params_to_dict(x) for x in p] if isinstance(p, list) else params_to_dict(p)
    Path(path).write_text(json.dumps(doc))


def load_params(path) -> ModelParams | list[ModelParams]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        return [params_from_dict(x) for x in doc]
    return params_from_dict(doc)
