"""Momentum queue and online N-way K-shot pseudo-task construction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import SoftAssignment, _hard_from_indices, select_top_k, sinkhorn
from .config import SinkhornConfig
from .encoder import encode_key, l2_normalize
from .errors import CapacityError, ConfigError, DiagnosticsError, ShapeError

UNLABELED = -1


@dataclass
class MomentumQueue:
    slots: np.ndarray  # (M, d) unit rows
    true_labels: np.ndarray  # (M,) ints, UNLABELED for random-init rows; diagnostics only
    head: int = 0  # next write position == oldest row
    initialized_count: int = 0

    @property
    def capacity(self) -> int:
        return self.slots.shape[0]

    def ordered(self) -> np.ndarray:
        """Rows from oldest to newest."""
        return np.roll(self.slots, -self.head, axis=0)

    def copy(self) -> "MomentumQueue":
        return MomentumQueue(self.slots.copy(), self.true_labels.copy(), self.head, self.initialized_count)


def queue_init(M: int, d: int, seed=0) -> MomentumQueue:
    if d < 2:
        raise ConfigError(f"queue dimension must be >= 2, got {d}")
    if M < 1:
        raise ConfigError(f"queue capacity must be >= 1, got {M}")
    rng = np.random.default_rng(seed)
    slots = l2_normalize(rng.standard_normal((M, d)))
    return MomentumQueue(slots, np.full(M, UNLABELED, dtype=np.int64))


def enqueue(queue: MomentumQueue, Z, labels=None) -> MomentumQueue:
    """Overwrite the oldest rows with ``Z`` (in order), in place."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    n, M = Z.shape[0], queue.capacity
    if n > M:
        raise CapacityError(f"cannot enqueue {n} rows into a queue of capacity {M}")
    if Z.shape[1] != queue.slots.shape[1]:
        raise ShapeError(f"key dimension {Z.shape[1]} != queue dimension {queue.slots.shape[1]}")
    pos = (queue.head + np.arange(n)) % M
    queue.slots[pos] = Z
    queue.true_labels[pos] = UNLABELED if labels is None else np.asarray(labels, dtype=np.int64)
    queue.head = int((queue.head + n) % M)
    queue.initialized_count = min(M, queue.initialized_count + n)
    return queue


@dataclass
class PseudoTask:
    queries: np.ndarray  # indices into the batch
    query_keys: np.ndarray  # (N, d)
    supports: np.ndarray  # (N*K, d) copies of queue rows
    A: np.ndarray  # (N, N*K) binary
    support_queue_indices: np.ndarray  # (N, K)
    soft: SoftAssignment | None = None

    @property
    def K(self) -> int:
        return self.support_queue_indices.shape[1]


def build_task(Z, queue: MomentumQueue, K: int, sinkhorn_cfg: SinkhornConfig | None = None,
               kernel=None) -> PseudoTask:
    """Select K supports per momentum key from the queue (current keys are not in it)."""
    cfg = sinkhorn_cfg or SinkhornConfig()
    Z = np.atleast_2d(Z)
    if K > queue.capacity:
        raise ConfigError(f"K={K} exceeds queue capacity {queue.capacity}")
    S = Z @ queue.slots.T
    soft = None
    if cfg.enabled:
        soft = sinkhorn(S, cfg.epsilon, cfg.max_iters, cfg.tol, marginals=cfg.marginals, K=K, kernel=kernel)
        hard = select_top_k(soft, K)
    else:
        hard = select_top_k(S, K)
    idx = hard.support_indices
    return PseudoTask(
        queries=np.arange(Z.shape[0]),
        query_keys=Z,
        supports=queue.slots[idx.reshape(-1)].copy(),
        A=hard.A,
        support_queue_indices=idx,
        soft=soft,
    )


def construct_pseudo_task(batch, state, queue: MomentumQueue, K: int, sinkhorn_cfg=None,
                          aug_weak=None, rng=None) -> PseudoTask:
    """Encode the weakly augmented batch with the momentum network and build its task."""
    from .augment import augment

    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise ConfigError("empty batch")
    if aug_weak is not None:
        x = augment(x, aug_weak, rng if rng is not None else np.random.default_rng(0))
    return build_task(encode_key(x, state), queue, K, sinkhorn_cfg)


def pseudo_label_quality(task: PseudoTask, queue_labels, query_labels) -> float:
    """Fraction of selected supports whose true label equals their query's."""
    queue_labels = np.asarray(queue_labels)
    query_labels = np.asarray(query_labels)
    if query_labels.shape[0] != task.support_queue_indices.shape[0]:
        raise DiagnosticsError("need one label per query")
    support_labels = queue_labels[task.support_queue_indices]
    if np.any(support_labels == UNLABELED) or np.any(query_labels == UNLABELED):
        raise DiagnosticsError("a selected support or query has no label")
    return float(np.mean(support_labels == query_labels[:, None]))


def shot_overlap_ratio(task: PseudoTask) -> float:
    """1 - (distinct support slots) / (N*K): zero when all shots are different."""
    idx = task.support_queue_indices
    return 1.0 - np.unique(idx).size / idx.size


def random_task(Z, queue: MomentumQueue, K: int, rng) -> PseudoTask:
    """Baseline: K uniformly random queue rows per query (without replacement per row)."""
    Z = np.atleast_2d(Z)
    idx = np.stack([rng.choice(queue.capacity, size=K, replace=False) for _ in range(Z.shape[0])])
    hard = _hard_from_indices(idx.astype(np.int64))
    return PseudoTask(np.arange(Z.shape[0]), Z, queue.slots[idx.reshape(-1)].copy(), hard.A, idx)
