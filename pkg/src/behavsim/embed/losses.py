"""Contrastive, metric-matching and imitation losses with gradients.

Functions named ``*_grad`` return ``(value, gradients)`` with gradients taken
with respect to the embeddings or logits they were given; the plain versions
return the value only.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

NORM_FLOOR = 1e-12


def _norms(a):
    return np.maximum(np.linalg.norm(a, axis=-1), NORM_FLOOR)


def cosine_similarity(u, v) -> float:
    """``u.v / (|u| |v|)`` with each norm floored at ``1e-12``."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    return float(u @ v / (_norms(u) * _norms(v)))


def cosine_matrix(a, b):
    """Cosine similarities between rows of ``a`` and rows of ``b``."""
    return (a @ b.T) / np.outer(_norms(a), _norms(b))


def cosine_matrix_grad(a, b, d_sim):
    """Backpropagate ``d_sim`` (shaped like ``cosine_matrix(a, b)``) to ``a`` and ``b``."""
    na, nb = _norms(a), _norms(b)
    sim = cosine_matrix(a, b)
    # Where a norm sits on its floor it is treated as a constant.
    live_a = (np.linalg.norm(a, axis=1) > NORM_FLOOR)[:, None]
    live_b = (np.linalg.norm(b, axis=1) > NORM_FLOOR)[:, None]
    scaled = d_sim / np.outer(na, nb)
    da = scaled @ b - live_a * (np.sum(d_sim * sim, axis=1) / na**2)[:, None] * a
    db = scaled.T @ a - live_b * (np.sum(d_sim * sim, axis=0) / nb**2)[:, None] * b
    return da, db


def _soft_contrastive(sims, log_weights, positive, lam):
    """``-log(w_p e^{lam s_p} / sum_k w_k e^{lam s_k})`` and its derivative in ``sims``."""
    logits = lam * sims + log_weights
    live = np.isfinite(logits)
    total = logsumexp(logits[live])
    loss = float(total - logits[positive])
    q = np.zeros_like(sims)
    q[live] = np.exp(logits[live] - total)
    q[positive] -= 1.0
    return loss, lam * q


def simclr_loss(anchor, positive, negatives, lam: float) -> float:
    """Contrastive loss of one anchor against one positive and a set of negatives."""
    negatives = np.atleast_2d(np.asarray(negatives, float))
    if negatives.size == 0:
        raise ValueError("need at least one negative")
    if lam <= 0:
        raise ValueError("lam must be positive")
    candidates = np.vstack([positive, negatives])
    sims = cosine_matrix(np.atleast_2d(anchor), candidates)[0]
    return _soft_contrastive(sims, np.zeros(len(candidates)), 0, lam)[0]


def _log_weights(positive, gammas=None, distances=None, beta=None):
    """Log weights: ``log Gamma`` for the positive, ``log(1 - Gamma)`` for the rest.

    Passing distances and ``beta`` keeps ``log Gamma = -d / beta`` exact even
    where ``Gamma`` itself would underflow.
    """
    if distances is not None:
        log_gamma = -np.asarray(distances, float) / beta
    else:
        gammas = np.asarray(gammas, float)
        if np.any(gammas <= 0.0) or np.any(gammas > 1.0):
            raise ValueError("Gamma values must lie in (0, 1]")
        log_gamma = np.log(gammas)
    with np.errstate(divide="ignore"):
        out = np.log(-np.expm1(log_gamma))
    out[positive] = log_gamma[positive]
    return out


def cme_pair_loss_grad(anchor, candidates, positive: int, gammas, lam: float, distances=None, beta=None):
    """Soft contrastive loss for one anchor; gradients for ``anchor`` and ``candidates``."""
    candidates = np.atleast_2d(np.asarray(candidates, float))
    anchor = np.atleast_2d(np.asarray(anchor, float))
    if not 0 <= positive < len(candidates):
        raise ValueError(f"positive index {positive} is not in the candidate set of size {len(candidates)}")
    sims = cosine_matrix(anchor, candidates)[0]
    loss, d_sims = _soft_contrastive(sims, _log_weights(positive, gammas, distances, beta), positive, lam)
    d_anchor, d_cand = cosine_matrix_grad(anchor, candidates, d_sims[None, :])
    return loss, d_anchor[0], d_cand


def cme_pair_loss(anchor, candidates, positive: int, gammas, lam: float) -> float:
    """Positive weighted by ``Gamma``, each negative by ``1 - Gamma``.

    A candidate set with no (nonzero-weight) negatives gives a loss of 0.
    """
    return cme_pair_loss_grad(anchor, candidates, positive, gammas, lam)[0]


def nearest_rows(values: np.ndarray) -> np.ndarray:
    """Row index of the smallest entry of every column, ties to the lowest row."""
    return np.argmin(np.asarray(values, float), axis=0)


def select_positive_pairs(table, beta: float) -> list:
    """``(y, x_tilde_y, Gamma column)`` for every column ``y`` of a metric table.

    ``x_tilde_y`` maximises ``Gamma(x, y) = exp(-d(x, y) / beta)``; it is found
    as the argmin of ``d`` so that underflowed similarities cannot create ties.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    values = np.asarray(getattr(table, "values", table), float)
    best = nearest_rows(values)
    return [(y, int(best[y]), np.exp(-values[:, y] / beta)) for y in range(values.shape[1])]


def cme_total_loss_grad(z_x, z_y, distances, beta: float, lam: float):
    """Mean soft contrastive loss over anchors ``y`` with all of ``z_x`` as candidates.

    ``distances[i, j]`` is the metric between candidate ``i`` and anchor ``j``.
    Returns the loss and its gradients for ``z_x`` and ``z_y``.
    """
    z_x = np.atleast_2d(np.asarray(z_x, float))
    z_y = np.atleast_2d(np.asarray(z_y, float))
    distances = np.asarray(distances, float)
    if distances.shape != (len(z_x), len(z_y)):
        raise ValueError(f"distance table {distances.shape} does not match embeddings ({len(z_x)}, {len(z_y)})")
    positives = nearest_rows(distances)
    log_gamma = -distances / beta
    with np.errstate(divide="ignore"):
        log_w = np.log(-np.expm1(log_gamma))
    cols = np.arange(len(z_y))
    log_w[positives, cols] = log_gamma[positives, cols]
    sims = cosine_matrix(z_y, z_x)  # anchors x candidates
    logits = lam * sims + log_w.T
    totals = logsumexp(logits, axis=1)
    loss = float(np.mean(totals - logits[cols, positives]))
    q = np.exp(logits - totals[:, None])
    q[cols, positives] -= 1.0
    d_sims = lam * q / len(z_y)
    d_zy, d_zx = cosine_matrix_grad(z_y, z_x, d_sims)
    return loss, d_zx, d_zy


def cme_total_loss(z_x, z_y, table, beta: float, lam: float) -> float:
    values = np.asarray(getattr(table, "values", table), float)
    return cme_total_loss_grad(z_x, z_y, values, beta, lam)[0]


def l2_metric_loss_grad(z_x, z_y, distances):
    """Mean of ``(|z_x[i] - z_y[j]| - d[i, j])^2`` over all pairs, with gradients.

    The Euclidean norm is smoothed as ``sqrt(|.|^2 + 1e-12)`` so the gradient
    exists when two embeddings coincide.
    """
    z_x = np.atleast_2d(np.asarray(z_x, float))
    z_y = np.atleast_2d(np.asarray(z_y, float))
    distances = np.asarray(distances, float)
    diff = z_x[:, None, :] - z_y[None, :, :]
    norm = np.sqrt(np.sum(diff**2, axis=2) + NORM_FLOOR)
    resid = norm - distances
    loss = float(np.mean(resid**2))
    coef = 2.0 * resid / norm / resid.size
    d_diff = coef[:, :, None] * diff
    return loss, d_diff.sum(axis=1), -d_diff.sum(axis=0)


def l2_metric_loss(z_x, z_y, table) -> float:
    values = np.asarray(getattr(table, "values", table), float)
    return l2_metric_loss_grad(z_x, z_y, values)[0]


def imitation_loss_grad(logits, actions):
    """Mean cross-entropy of ``softmax(logits)`` against integer actions."""
    logits = np.atleast_2d(np.asarray(logits, float))
    actions = np.atleast_1d(np.asarray(actions, int))
    if np.any(actions < 0) or np.any(actions >= logits.shape[1]):
        raise ValueError("action index out of range")
    rows = np.arange(len(actions))
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[rows, actions]))
    grad = softmax(logits, axis=1)
    grad[rows, actions] -= 1.0
    return loss, grad / len(actions)


def imitation_loss(logits, actions) -> float:
    return imitation_loss_grad(logits, actions)[0]
