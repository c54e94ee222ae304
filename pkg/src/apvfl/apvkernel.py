"""Score projection onto the auxiliary projection vector (APV), Gaussian
kernel smoothing along the projected line, hard sorting, and the analytic
gradients of the smoothed embeddings.

Two score conventions appear here:

``"score"``
    Training convention. ``s_i = <h_i / max_j ||h_j||, a>``; the max-norm
    scale is a constant within a forward/backward pass and ``a`` is not
    normalised.
``"sphere"``
    Unit-sphere convention used by the theory checks. ``s_i = <h_i, a>``
    with ``||a|| = 1``; gradients are the tangential parts, i.e. the exact
    derivatives of ``s_i(a / ||a||)`` at a unit ``a``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

APV_COLLAPSE = 1e-12


@dataclass
class KernelArtifacts:
    s: np.ndarray
    K: np.ndarray
    M: np.ndarray
    Z: np.ndarray
    sigma: float
    scale: float

    @property
    def beta(self) -> np.ndarray:
        return self.K / self.M[:, None]


def init_apv(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal(dim)
    return a / np.linalg.norm(a)


def ensure_apv(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Return ``a``, or a fresh unit draw if its norm collapsed."""
    if not np.all(np.isfinite(a)) or np.linalg.norm(a) < APV_COLLAPSE:
        return init_apv(len(a), rng)
    return a


def score_scale(H: np.ndarray) -> float:
    m = float(np.sqrt((H * H).sum(axis=1).max())) if len(H) else 0.0
    return 1.0 / m if m > 0 else 0.0


def project_scores(H: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Node coordinates on the APV line after max-norm rescaling of ``H``."""
    return score_scale(H) * (H @ a)


def kernel_matrix(s: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    if not sigma > 0:
        raise ValueError(f"bandwidth must be positive, got {sigma}")
    s = np.asarray(s, dtype=np.float64)
    d = s[:, None] - s[None, :]
    K = np.exp(-(d * d) / (sigma * sigma))
    return K, K.sum(axis=1)


def smooth_aggregate(K: np.ndarray, M: np.ndarray, H: np.ndarray) -> np.ndarray:
    return (K @ H) / M[:, None]


def kernel_forward(
    H: np.ndarray, a: np.ndarray, sigma: float, convention: str = "score", scale: float | None = None
) -> KernelArtifacts:
    """Scores, kernel, row masses and smoothed embeddings for one pass.

    ``scale`` overrides the max-norm factor (training convention only);
    finite-difference checks use it to hold the factor fixed.
    """
    if convention == "score":
        c = score_scale(H) if scale is None else float(scale)
    elif convention == "sphere":
        c = 1.0
    else:
        raise ValueError(f"unknown score convention {convention!r}")
    s = c * (H @ a)
    K, M = kernel_matrix(s, sigma)
    return KernelArtifacts(s, K, M, smooth_aggregate(K, M, H), float(sigma), c)


def hard_sort(s: np.ndarray) -> np.ndarray:
    """Rank-to-node permutation; ties keep ascending node index."""
    return np.argsort(np.asarray(s), kind="stable")


def gather(H: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return H[pi]


# ---------------------------------------------------------------- gradients


def grad_score(h: np.ndarray, s: float, a: np.ndarray) -> np.ndarray:
    """Tangential gradient of ``s = <h, a>`` on the unit sphere."""
    return h - s * a


def grad_kernel_entry(s_i, s_j, h_i, h_j, a, sigma: float) -> np.ndarray:
    """Gradient of ``exp(-(s_i - s_j)^2 / sigma^2)`` with respect to ``a``
    (unit-sphere convention)."""
    d = s_i - s_j
    k = np.exp(-d * d / (sigma * sigma))
    return -(2.0 / sigma**2) * d * k * ((h_i - h_j) - d * a)


def _pair_coefficients(art: KernelArtifacts, H: np.ndarray, G: np.ndarray) -> np.ndarray:
    # c_ij = -(2/sigma^2) beta_ij (s_i - s_j) <g_i, h_j - z_i>, the weight of
    # the score-difference derivative in dL/da and dL/dH
    d = art.s[:, None] - art.s[None, :]
    gh = G @ H.T
    gz = np.einsum("ij,ij->i", G, art.Z)
    return -(2.0 / art.sigma**2) * art.beta * d * (gh - gz[:, None])


def grad_apv_loss(
    H: np.ndarray,
    a: np.ndarray,
    sigma: float,
    G: np.ndarray,
    convention: str = "score",
    art: KernelArtifacts | None = None,
) -> np.ndarray:
    """Gradient of ``L = sum_i <G_i, z_i(a)>`` with respect to the APV.

    Assembles ``sum_i (dz_i/da)^T G_i`` with
    ``dz_i/da = -(2/sigma^2) sum_j beta_ij (s_i - s_j) (h_j - z_i) (x) d_ij``,
    where ``d_ij`` is the derivative of ``s_i - s_j``: ``c (h_i - h_j)`` in
    the training convention and ``(h_i - h_j) - (s_i - s_j) a`` on the sphere.
    """
    art = art if art is not None else kernel_forward(H, a, sigma, convention)
    coef = _pair_coefficients(art, H, G)
    w = coef.sum(axis=1) - coef.sum(axis=0)
    if convention == "score":
        return art.scale * (H.T @ w)
    d = art.s[:, None] - art.s[None, :]
    return H.T @ w - float((coef * d).sum()) * a


def grad_h_through_kernel(
    H: np.ndarray,
    a: np.ndarray,
    sigma: float,
    G: np.ndarray,
    art: KernelArtifacts | None = None,
) -> np.ndarray:
    """Gradient of ``L = sum_i <G_i, z_i>`` with respect to ``H``.

    Two paths: ``H`` enters ``z`` linearly through the normalised kernel
    weights, and through the scores ``s = c H a`` (``c`` held fixed).
    """
    art = art if art is not None else kernel_forward(H, a, sigma, "score")
    direct = art.beta.T @ G
    coef = _pair_coefficients(art, H, G)
    gs = coef.sum(axis=1) - coef.sum(axis=0)
    return direct + art.scale * np.outer(gs, a)


# ---------------------------------------------------------------- FD oracle


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f(x)
        flat[i] = old - step
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * step)
    return g


def relative_error(g: np.ndarray, g_ref: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(g) - np.ravel(g_ref)) / max(np.linalg.norm(g_ref), 1e-8))
