"""Exact t-distributed stochastic neighbor embedding for small corpora.

Nothing approximate: full pairwise affinities with per-point
perplexity calibration by binary search, then gradient descent on the
Kullback-Leibler objective with momentum and early exaggeration. Runs
are deterministic for a fixed seed, and the returned embedding is the
best snapshot by true KL, so the final objective never exceeds the
initial one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


class ProjectionError(ValueError):
    pass


@dataclass
class ProjectionResult:
    points: np.ndarray  # (n, 2)
    kl_initial: float
    kl_final: float
    perplexity_used: float
    jittered: bool


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_affinities(dists_row: np.ndarray, target_entropy: float, steps: int = 64):
    """Binary-search the Gaussian precision so the row entropy matches.

    Distances are shifted by the row minimum before exponentiating; the
    conditional probabilities are shift-invariant and this avoids
    underflowing every bucket to zero at large data scales.
    """
    shifted = dists_row - dists_row.min()
    beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
    probs = np.full_like(dists_row, 1.0 / max(len(dists_row), 1))
    for _ in range(steps):
        probs = np.exp(-shifted * beta)
        probs /= max(probs.sum(), _EPS)
        entropy = -np.sum(probs * np.log(np.maximum(probs, _EPS)))
        if abs(entropy - target_entropy) < 1e-7:
            break
        if entropy > target_entropy:
            beta_lo = beta
            beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
        else:
            beta_hi = beta
            beta = (beta + beta_lo) / 2.0
    return probs


def _joint_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    n = len(x)
    d = _pairwise_sq_dists(x)
    target_entropy = float(np.log(perplexity))
    p_cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d[i], i)
        probs = _row_affinities(row, target_entropy)
        p_cond[i, np.arange(n) != i] = probs
    p = (p_cond + p_cond.T) / (2.0 * n)
    return np.maximum(p, _EPS)


def _q_matrix(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = _pairwise_sq_dists(y)
    num = 1.0 / (1.0 + d)
    np.fill_diagonal(num, 0.0)
    q = num / max(num.sum(), _EPS)
    return np.maximum(q, _EPS), num


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(len(p), dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def project(
    vectors: np.ndarray,
    seed: int = 0,
    perplexity: float = 8.0,
    n_iter: int = 600,
    learning_rate: float = 100.0,
    early_exaggeration: float = 4.0,
    exaggeration_iters: int = 100,
) -> ProjectionResult:
    """Embed row vectors into 2-D; deterministic for a fixed seed."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ProjectionError("need at least 3 vectors to project")
    n = len(x)

    max_perplexity = (n - 1) / 3.0
    perplexity_used = min(float(perplexity), max_perplexity * (1.0 - 1e-9))
    perplexity_used = max(perplexity_used, 1e-3)

    rng = np.random.default_rng(seed)
    jittered = False
    _, first_index = np.unique(x, axis=0, return_index=True)
    if len(first_index) < n:
        # identical rows collapse affinities; nudge the later duplicates
        scale = max(float(np.abs(x).mean()), 1.0) * 1e-9
        dup_rows = sorted(set(range(n)) - set(first_index.tolist()))
        x = x.copy()
        x[dup_rows] += rng.normal(0.0, scale, size=(len(dup_rows), x.shape[1]))
        jittered = True

    p = _joint_affinities(x, perplexity_used)

    y = rng.normal(0.0, 1e-4, size=(n, 2))
    q, _ = _q_matrix(y)
    kl_initial = _kl(p, q)
    best_kl, best_y = kl_initial, y.copy()

    velocity = np.zeros_like(y)
    for it in range(n_iter):
        exaggerate = early_exaggeration if it < exaggeration_iters else 1.0
        q, num = _q_matrix(y)
        pq = (p * exaggerate - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        momentum = 0.5 if it < exaggeration_iters else 0.8
        velocity = momentum * velocity - learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if (it + 1) % 10 == 0 or it == n_iter - 1:
            q, _ = _q_matrix(y)
            kl = _kl(p, q)
            if kl < best_kl:
                best_kl, best_y = kl, y.copy()

    return ProjectionResult(
        points=best_y,
        kl_initial=kl_initial,
        kl_final=best_kl,
        perplexity_used=perplexity_used,
        jittered=jittered,
    )
