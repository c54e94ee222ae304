"""Numerical checks of the APV theory: Oja-type alignment of the APV with the
principal embedding direction, the small-bandwidth limit in which kernel
smoothing turns into sort-then-convolve, kernel weight concentration, and
convergence diagnostics of a federation run.

The simulation uses full-batch gradients, so the stochastic-gradient variance
term of the convergence bound is zero here.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import apvkernel as ak
from .graphdata import Graph
from .model import ModelShape, backward, conv1d, cross_entropy, forward, init_params, normalized_adjacency
from .numerics import make_rng, power_iteration

GAP_EPS = 1e-12


def covariance(H: np.ndarray) -> np.ndarray:
    """``(1/N) sum_i h_i h_i^T`` (rows assumed centred)."""
    H = np.asarray(H, dtype=np.float64)
    return H.T @ H / len(H)


def centered_embeddings(n: int, eigvals, rng: np.random.Generator) -> np.ndarray:
    """``n x d`` centred rows whose covariance is exactly ``U diag(eigvals) U^T``
    for a random orthogonal ``U``."""
    eigvals = np.asarray(eigvals, dtype=np.float64)
    d = len(eigvals)
    Y = rng.standard_normal((n, d))
    Y -= Y.mean(axis=0)
    Q, _ = np.linalg.qr(Y)
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return np.sqrt(n) * Q @ np.diag(np.sqrt(eigvals)) @ U.T


# ---------------------------------------------------------------- Oja


@dataclass
class OjaRun:
    C: np.ndarray
    trajectory: list[np.ndarray]
    alignment: list[float] | None
    u_max: np.ndarray | None
    eigengap: float
    claim_checked: bool

    @property
    def final_alignment(self) -> float | None:
        return self.alignment[-1] if self.alignment else None

    def steps_to(self, level: float) -> int | None:
        if not self.alignment:
            return None
        for t, v in enumerate(self.alignment):
            if v >= level:
                return t
        return None


def oja_from_covariance(
    C: np.ndarray, eta: float, steps: int, rng: np.random.Generator, a0: np.ndarray | None = None
) -> OjaRun:
    """Iterate ``a <- normalize(a + eta C a)`` from ``a0`` (a random unit
    vector by default) and track ``|cos(a, u_max)|``.

    The update moves along ``+C a``: descent on the smoothed loss pushes the
    APV toward the top eigenvector, so the ascent sign is the one that
    reproduces the stated attractor.
    """
    C = np.asarray(C, dtype=np.float64)
    d = len(C)
    a = ak.init_apv(d, rng) if a0 is None else np.asarray(a0, dtype=np.float64) / np.linalg.norm(a0)
    lam = np.linalg.eigvalsh(C)[::-1]
    gap = float(lam[0] - lam[1]) if d > 1 else float(lam[0])
    checked = gap > GAP_EPS * max(1.0, abs(lam[0]))
    u = None
    if checked:
        u, _ = power_iteration(C, iters=100_000, rng=make_rng(0), tol=1e-14)
    traj = [a]
    for _ in range(steps):
        w = a + eta * (C @ a)
        a = w / np.linalg.norm(w)
        traj.append(a)
    align = [abs(float(v @ u)) for v in traj] if checked else None
    return OjaRun(C, traj, align, u, gap if checked else 0.0, checked)


def oja_verify(H: np.ndarray, eta: float, steps: int, rng: np.random.Generator, a0=None, atol: float = 1e-8) -> OjaRun:
    H = np.asarray(H, dtype=np.float64)
    mu = H.mean(axis=0)
    if np.linalg.norm(mu) > atol * max(1.0, np.abs(H).max()):
        raise ValueError(f"embeddings must be centred (row-mean norm {np.linalg.norm(mu):.3g})")
    return oja_from_covariance(covariance(H), eta, steps, rng, a0)


# ---------------------------------------------------------------- sorting limit


@dataclass
class SortingLimitResult:
    sigmas: list[float]
    gaps: list[float]
    reference: float
    envelope: list[float]
    min_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def conv_lipschitz(W: np.ndarray) -> float:
    """Operator-norm bound of the zero-padded Conv1D map: ``sum_tau ||W_tau||_2``."""
    return float(sum(np.linalg.norm(w, 2) for w in W))


def sorting_limit_check(H: np.ndarray, apv: np.ndarray, W: np.ndarray, sigmas, b: np.ndarray | None = None) -> SortingLimitResult:
    """Frobenius gap between Conv1D of the sorted smoothed embeddings and
    Conv1D of the sorted raw embeddings, for each bandwidth in ``sigmas``.

    Scores are ``H a`` with ``a`` scaled to unit norm. ``envelope[k]`` is the
    bound ``2 N (N-1) Lip(W) max_i ||h_i|| exp(-gap^2 / sigma_k^2)``.
    """
    H = np.asarray(H, dtype=np.float64)
    a = np.asarray(apv, dtype=np.float64)
    a = a / np.linalg.norm(a)
    n, d = H.shape
    b = np.zeros(d) if b is None else b
    s = H @ a
    pi = ak.hard_sort(s)
    ss = s[pi]
    if n > 1:
        diffs = np.diff(ss)
        k = int(np.argmin(diffs))
        if diffs[k] <= 0:
            raise ValueError(f"tied scores at nodes {int(pi[k])} and {int(pi[k + 1])}")
        min_gap = float(diffs[k])
    else:
        min_gap = float("inf")
    ref_out = conv1d(H[pi], W, b)
    reference = float(np.linalg.norm(ref_out))
    lip = conv_lipschitz(W)
    hmax = float(np.linalg.norm(H, axis=1).max()) if n else 0.0
    gaps, env = [], []
    for sigma in sigmas:
        art = ak.kernel_forward(H, a, sigma, "sphere")
        gaps.append(float(np.linalg.norm(conv1d(art.Z[pi], W, b) - ref_out)))
        e = 0.0 if n < 2 else 2.0 * n * (n - 1) * lip * hmax * np.exp(-(min_gap**2) / sigma**2)
        env.append(float(e))
    return SortingLimitResult([float(x) for x in sigmas], gaps, reference, env, min_gap)


def spaced_scores_embeddings(n: int, d: int, gap: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random ``H`` and unit ``a`` whose scores ``H a`` are a shuffled
    arithmetic progression with step ``gap``."""
    a = ak.init_apv(d, rng)
    H0 = rng.standard_normal((n, d))
    s = gap * rng.permutation(n) - gap * (n - 1) / 2
    H = H0 - np.outer(H0 @ a, a) + np.outer(s, a)
    return H, a


def off_diagonal_mass(s: np.ndarray, sigma: float) -> np.ndarray:
    """Per-row normalised kernel weight on nodes other than the row's own."""
    K, M = ak.kernel_matrix(s, sigma)
    beta = K / M[:, None]
    return 1.0 - np.diag(beta)


# ---------------------------------------------------------------- convergence


@dataclass
class ConvergenceReport:
    slope: float
    intercept: float
    plateau: float
    max_rho: float | None
    early_rounds: int
    moving_average: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def moving_average(x, window: int = 5) -> np.ndarray:
    """Trailing mean; entry ``t`` covers rounds ``t - window + 1 .. t``."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        return np.array([])
    return np.convolve(x, np.ones(window) / window, mode="valid")


def convergence_trace(losses, rhos=None, early_fraction: float = 1 / 3) -> ConvergenceReport:
    """Least-squares slope of ``log(L_t - min L)`` over the first
    ``early_fraction`` of rounds, skipping rounds at the minimum."""
    L = np.asarray(losses, dtype=np.float64)
    if len(L) < 5:
        raise ValueError(f"need at least 5 rounds, got {len(L)}")
    lmin = float(L.min())
    m = max(3, int(round(len(L) * early_fraction)))
    t = np.arange(1, len(L) + 1, dtype=np.float64)[:m]
    gap = L[:m] - lmin
    keep = gap > 0
    if keep.sum() < 2:
        slope, icpt = 0.0, float("-inf") if not keep.any() else float(np.log(gap[keep][0]))
    else:
        slope, icpt = np.polyfit(t[keep], np.log(gap[keep]), 1)
    tail = L[-max(1, len(L) // 10) :]
    return ConvergenceReport(
        float(slope),
        float(icpt),
        float(tail.mean()),
        None if rhos is None else float(np.max(rhos)),
        m,
        moving_average(L).tolist(),
    )


# ---------------------------------------------------------------- batch checks


def _random_graph(rng, n, in_dim, classes) -> Graph:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    return Graph(n, edges, rng.standard_normal((n, in_dim)), rng.integers(0, classes, n), classes)


def gradient_checks(instances: int = 20, seed: int = 0, step: float = 1e-6) -> dict:
    """Worst relative error of each analytic gradient against central
    differences over random small instances."""
    worst = {k: 0.0 for k in ("score", "kernel_entry", "apv_score", "apv_sphere", "h_kernel", "model_soft", "model_hard")}
    t0 = time.perf_counter()
    for inst in range(instances):
        rng = make_rng(seed, inst)
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        sigma = float(rng.uniform(0.5, 2.0))
        H = rng.standard_normal((n, d))
        G = rng.standard_normal((n, d))
        a = ak.init_apv(d, rng)

        def unit(x):
            return x / np.linalg.norm(x)

        i, j = 0, n - 1
        fd = ak.finite_difference(lambda x: float(H[i] @ unit(x)), a, step)
        worst["score"] = max(worst["score"], ak.relative_error(ak.grad_score(H[i], H[i] @ a, a), fd))
        fk = lambda x: float(np.exp(-((H[i] - H[j]) @ unit(x)) ** 2 / sigma**2))
        g = ak.grad_kernel_entry(H[i] @ a, H[j] @ a, H[i], H[j], a, sigma)
        worst["kernel_entry"] = max(worst["kernel_entry"], ak.relative_error(g, ak.finite_difference(fk, a, step)))

        c = ak.score_scale(H)
        f_score = lambda x: float((G * ak.kernel_forward(H, x, sigma, scale=c).Z).sum())
        f_sphere = lambda x: float((G * ak.kernel_forward(H, unit(x), sigma, "sphere").Z).sum())
        g = ak.grad_apv_loss(H, a, sigma, G, "score")
        worst["apv_score"] = max(worst["apv_score"], ak.relative_error(g, ak.finite_difference(f_score, a, step)))
        g = ak.grad_apv_loss(H, a, sigma, G, "sphere")
        worst["apv_sphere"] = max(worst["apv_sphere"], ak.relative_error(g, ak.finite_difference(f_sphere, a, step)))
        f_h = lambda x: float((G * ak.kernel_forward(x, a, sigma, scale=c).Z).sum())
        g = ak.grad_h_through_kernel(H, a, sigma, G)
        worst["h_kernel"] = max(worst["h_kernel"], ak.relative_error(g, ak.finite_difference(f_h, H, step)))

        classes = int(rng.integers(2, 4))
        layers = int(rng.integers(1, 3))
        g_graph = _random_graph(rng, n, int(rng.integers(2, 5)), classes)
        a_hat = normalized_adjacency(g_graph)
        mask = np.ones(n, dtype=bool)
        for hard, key in ((False, "model_soft"), (True, "model_hard")):
            p = init_params(ModelShape(g_graph.num_features, d, classes, layers, 3, hard), rng)
            if hard:
                p.conv_b = rng.standard_normal(d) * 0.1
            tr = forward(a_hat, g_graph.features, p, sigma, hard)
            scale = ak.score_scale(tr.H)
            _, gl = cross_entropy(tr.logits, g_graph.labels, mask)
            grads = backward(tr, gl, p).named()
            named = p.named()
            for name, arr in named.items():
                def f(x, name=name):
                    q = p.from_named({**named, name: x})
                    t = forward(a_hat, g_graph.features, q, sigma, hard, scale=scale)
                    return cross_entropy(t.logits, g_graph.labels, mask)[0]

                ref = ak.finite_difference(f, arr, step)
                err = ak.relative_error(grads[name], ref) if np.linalg.norm(ref) > 1e-9 else float(np.abs(grads[name]).max())
                worst[key] = max(worst[key], err)
    return {"instances": instances, "worst_relative_error": worst, "seconds": time.perf_counter() - t0}


def oja_checks(seeds: int = 10, n: int = 200, d: int = 6, eta: float = 0.1, steps: int = 1000, gap: float = 0.5) -> dict:
    runs = []
    for sd in range(seeds):
        rng = make_rng(sd, 31)
        top = rng.uniform(0.5, 3.0, d - 1)
        lam = np.sort(np.append(top, top.max() + gap + rng.uniform(0, 1)))[::-1]
        H = centered_embeddings(n, lam, rng)
        r = oja_verify(H, eta, steps, rng)
        runs.append({"seed": sd, "eigengap": r.eigengap, "final_alignment": r.final_alignment, "steps_to_0.999": r.steps_to(0.999)})
    return {"runs": runs, "passed": all(r["final_alignment"] >= 0.999 and r["eigengap"] >= gap for r in runs)}


SIGMAS = (1.0, 1e-1, 1e-2, 1e-3)


def sorting_limit_checks(seeds: int = 10, gap: float = 0.1, sigmas=SIGMAS) -> dict:
    out = []
    for sd in range(seeds):
        rng = make_rng(sd, 32)
        n, d = int(rng.integers(4, 9)), int(rng.integers(2, 7))
        H, a = spaced_scores_embeddings(n, d, gap, rng)
        W = rng.standard_normal((3, d, d))
        r = sorting_limit_check(H, a, W, sigmas)
        mono = all(g2 <= g1 for g1, g2 in zip(r.gaps, r.gaps[1:]))
        out.append({**r.to_dict(), "seed": sd, "monotone": mono, "final_ok": r.gaps[-1] <= 1e-6 * r.reference})
    return {"runs": out, "passed": all(x["monotone"] and x["final_ok"] for x in out)}


def weight_concentration_checks(seeds: int = 10, sigma: float = 1e-3, gap: float = 0.1) -> dict:
    worst = 0.0
    for sd in range(seeds):
        rng = make_rng(sd, 33)
        n = int(rng.integers(2, 9))
        s = gap * rng.permutation(n)
        worst = max(worst, float(off_diagonal_mass(s, sigma).max()))
    return {"max_off_diagonal_mass": worst, "passed": worst < 1e-4}


def run_checks(which: str = "all") -> dict:
    """Report for ``verify``: each selected check with a pass flag."""
    report: dict = {}
    if which in ("gradients", "all"):
        g = gradient_checks()
        w = g["worst_relative_error"]
        isolated = ("score", "kernel_entry")
        g["passed"] = all(w[k] <= 1e-5 for k in isolated) and all(v <= 1e-4 for v in w.values())
        report["gradients"] = g
    if which in ("oja", "all"):
        report["oja"] = oja_checks()
    if which in ("sorting-limit", "all"):
        report["sorting_limit"] = sorting_limit_checks()
        report["weight_concentration"] = weight_concentration_checks()
    if not report:
        raise ValueError(f"unknown check {which!r}")
    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report
