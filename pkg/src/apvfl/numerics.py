"""Dense linear-algebra helpers, seeded RNG streams and spectral utilities.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 stored in
row-major (C) order. Random streams come from numpy's PCG64 generator seeded
through ``SeedSequence``; the same seed yields the same stream on every
platform numpy supports.
"""
from __future__ import annotations

import numpy as np

FLOAT = np.float64


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=FLOAT)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_row(v, scale: float = 1.0) -> np.ndarray:
    """Softmax of ``scale * v`` computed with max-subtraction."""
    v = np.asarray(v, dtype=FLOAT)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    x = scale * v
    x = x - x.max()
    e = np.exp(x)
    return e / e.sum()


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=FLOAT)
    v = np.asarray(v, dtype=FLOAT)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    c = float(u @ v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional integer stream key.

    ``make_rng(seed, k, t)`` is the substream of client ``k`` in round ``t``;
    the key is hashed by ``SeedSequence`` so substreams are independent of
    the order in which they are requested.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so that its largest-magnitude entry is positive."""
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def power_iteration(
    c: np.ndarray,
    iters: int = 1000,
    rng: np.random.Generator | None = None,
    tol: float | None = None,
    history: list[float] | None = None,
) -> tuple[np.ndarray, float]:
    """Dominant eigenpair of a symmetric PSD matrix.

    Returns the unit eigenvector (sign fixed by :func:`fix_sign`) and its
    Rayleigh quotient. Iteration stops early once an iterate moves by at most
    ``tol`` in norm (never, when ``tol`` is None). If ``history`` is given,
    the Rayleigh quotient of every iterate is appended to it.
    """
    c = np.asarray(c, dtype=FLOAT)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"power iteration needs a square matrix, got {c.shape}")
    n = c.shape[0]
    rng = rng if rng is not None else make_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = float(v @ c @ v)
    if history is not None:
        history.append(lam)
    for _ in range(iters):
        w = c @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v lies in the null space; nothing left to amplify
            break
        step = np.linalg.norm(w / nw - v)
        v = w / nw
        new = float(v @ c @ v)
        if history is not None:
            history.append(new)
        done = tol is not None and step <= tol
        lam = new
        if done:
            break
    return fix_sign(v), lam
