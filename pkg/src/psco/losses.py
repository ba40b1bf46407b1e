"""Multi-positive temperature-scaled contrastive losses.

Keys are constants everywhere: only d(loss)/d(queries) is returned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssignmentError, ConfigError, NumericError, ShapeError


@dataclass
class LossValue:
    value: float
    per_query: np.ndarray
    grad_q: np.ndarray | None = None


def _logsumexp_rows(x):
    mx = x.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True)))[:, 0]


def contrast_loss(Q, keys, A, tau: float) -> LossValue:
    """Mean over queries of the averaged negative log-softmax of each query's positives.

    ``A[i, j] = 1`` marks key ``j`` as a positive for query ``i``.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    n, m = Q.shape[0], keys.shape[0]
    if A.shape != (n, m) or keys.shape[1] != Q.shape[1]:
        raise ShapeError(f"incompatible shapes Q={Q.shape}, keys={keys.shape}, A={A.shape}")
    positives = A.sum(axis=1)
    if np.any(positives <= 0):
        raise AssignmentError("every query needs at least one positive key")

    logits = Q @ keys.T / tau
    lse = _logsumexp_rows(logits)
    weights = A / positives[:, None]
    per_query = lse - (weights * logits).sum(axis=1)
    value = float(per_query.mean())
    if not np.isfinite(value):
        raise NumericError("contrastive loss is not finite")

    softmax = np.exp(logits - lse[:, None])
    grad_logits = (softmax - weights) / n
    grad_q = grad_logits @ keys / tau
    return LossValue(value, per_query, grad_q)


def psco_loss(Q, task, tau_psco: float = 1.0) -> LossValue:
    """Contrast the queries against the pseudo-task supports with its assignment."""
    return contrast_loss(Q, task.supports, task.A, tau_psco)


def psco_loss_cross_entropy(Q, supports, A, tau: float) -> float:
    """Soft-target cross-entropy form: mean_i [logsumexp_j(logit_ij) - sum_j A_ij logit_ij / K]."""
    logits = np.asarray(Q) @ np.asarray(supports).T / tau
    K = np.asarray(A).sum(axis=1)
    return float((_logsumexp_rows(logits) - (logits * A).sum(axis=1) / K).mean())


def prototype_decomposition(Q, supports, A, tau: float) -> float:
    """Split the loss into a query-to-prototype attraction and a partition term.

    Returns -(1/(N tau)) sum_i q_i . mean_{j in pos(i)} z_j + mean_i logsumexp_j(q_i . z_j / tau).
    """
    Q = np.asarray(Q, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    supports = np.asarray(supports, dtype=np.float64)
    prototypes = (A @ supports) / A.sum(axis=1, keepdims=True)
    attraction = -np.sum(Q * prototypes) / (Q.shape[0] * tau)
    return float(attraction + _logsumexp_rows(Q @ supports.T / tau).mean())


def moco_loss(Q, Z, queue, tau_moco: float = 0.2) -> LossValue:
    """Each query's positive is its own momentum key; other batch keys and the queue are negatives."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    queue = np.asarray(queue, dtype=np.float64).reshape(-1, Q.shape[1])
    n = Q.shape[0]
    if Z.shape != Q.shape:
        raise ShapeError(f"queries {Q.shape} and momentum keys {Z.shape} must align")
    A = np.zeros((n, n + queue.shape[0]))
    A[np.arange(n), np.arange(n)] = 1.0
    return contrast_loss(Q, np.vstack([Z, queue]), A, tau_moco)


def total_loss(psco: LossValue, moco: LossValue) -> LossValue:
    if not (np.isfinite(psco.value) and np.isfinite(moco.value)):
        raise NumericError(f"non-finite loss component: psco={psco.value}, moco={moco.value}")
    grad = None
    if psco.grad_q is not None and moco.grad_q is not None:
        grad = psco.grad_q + moco.grad_q
    return LossValue(psco.value + moco.value, psco.per_query + moco.per_query, grad)
