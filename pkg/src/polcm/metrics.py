"""Errors between true and estimated weight matrices.

Both metrics compare absolute values, so any sign flip of a latent is
free. The orthogonal metric also lets the estimate's latent rows be rotated
before comparing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class MetricResult:
    mse: float
    q_star: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _support(f_true: np.ndarray, f_hat: np.ndarray, support) -> np.ndarray:
    f_true, f_hat = np.asarray(f_true), np.asarray(f_hat)
    if f_true.shape != f_hat.shape or f_true.ndim != 2 or f_true.shape[0] != f_true.shape[1]:
        raise ValueError(f"shape mismatch: {f_true.shape} vs {f_hat.shape}")
    mask = (f_true != 0) if support is None else np.asarray(support, dtype=bool)
    if mask.shape != f_true.shape:
        raise ValueError("support mask has the wrong shape")
    return mask


def mse_group_sign(f_true: np.ndarray, f_hat: np.ndarray, support=None) -> float:
    """||(|F| - |F_hat|)||^2 divided by the number of edges.

    ``support`` is the graph's edge mask; without it the nonzeros of
    ``f_true`` are taken as the edges.
    """
    mask = _support(f_true, f_hat, support)
    if np.any(np.asarray(f_hat)[~mask] != 0) or np.any(np.asarray(f_true)[~mask] != 0):
        raise ValueError("weights outside the edge support")
    count = int(mask.sum())
    if count == 0:
        return 0.0
    diff = np.abs(f_true) - np.abs(f_hat)
    return float((diff**2).sum() / count)


def _random_orthogonal(rng: np.random.Generator, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def _polar(q: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(q)
    return u @ vt


def mse_orthogonal(
    f_true: np.ndarray,
    f_hat: np.ndarray,
    num_latent: int,
    support=None,
    full_q: bool = False,
    restarts: int = 8,
    iters: int = 600,
    lr: float = 0.02,
    seed: int = 0,
) -> MetricResult:
    """Minimum over orthogonal Q of the error between |F| and |Q F_hat|.

    By default Q acts only on the latent rows (identity on observed rows);
    ``full_q`` rotates all rows. Q is moved along the orthogonal group by
    Adam steps in its skew-symmetric tangent space. Starts are the
    identity, the Procrustes solution of the signed problem, and random
    orthogonal matrices; the best point seen is returned, so the result is
    never above the group-sign error.
    """
    f_true = np.asarray(f_true, dtype=float)
    f_hat = np.asarray(f_hat, dtype=float)
    mask = _support(f_true, f_hat, support)
    count = max(int(mask.sum()), 1)
    k = f_true.shape[0] if full_q else num_latent
    if k == 0:
        return MetricResult(mse_group_sign(f_true, f_hat, mask), np.eye(0), {"restarts": 0})
    target = np.abs(f_true[:k])
    rest = ((np.abs(f_true[k:]) - np.abs(f_hat[k:])) ** 2).sum()
    fh = f_hat[:k]

    def loss_grad(q):
        rot = q @ fh
        err = np.abs(rot) - target
        return (rest + (err**2).sum()) / count, (2.0 / count) * (err * np.sign(rot)) @ fh.T

    u, _, vt = np.linalg.svd(f_true[:k] @ fh.T)
    rng = np.random.default_rng(seed)
    starts = [np.eye(k), u @ vt] + [_random_orthogonal(rng, k) for _ in range(max(restarts - 2, 0))]
    best_val, best_q = np.inf, np.eye(k)
    finals = []
    for q in starts:
        m = np.zeros((k, k))
        v = np.zeros((k, k))
        val, g = loss_grad(q)
        run_best, run_q = val, q
        for t in range(1, iters + 1):
            a = q.T @ g
            a = (a - a.T) / 2
            m = BETA1 * m + (1 - BETA1) * a
            v = BETA2 * v + (1 - BETA2) * a**2
            step = lr * (m / (1 - BETA1**t)) / (np.sqrt(v / (1 - BETA2**t)) + EPS)
            step = (step - step.T) / 2
            q = q @ expm(-step)
            val, g = loss_grad(q)
            if val < run_best:
                run_best, run_q = val, q
        finals.append(float(run_best))
        if run_best < best_val:
            best_val, best_q = run_best, run_q
    best_q = _polar(best_q)
    best_val = loss_grad(best_q)[0]
    gs = mse_group_sign(f_true, f_hat, mask)
    if gs <= best_val:
        best_val, best_q = gs, np.eye(k)
    return MetricResult(
        float(best_val),
        best_q,
        {"restart_values": finals, "full_q": full_q, "group_sign_mse": gs},
    )
