"""Meta-test: episodic prototype classification with optional support-set adaptation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import GradientTape, backward, encode_online_key, encode_query, l2_normalize
from .errors import ConfigError, EpisodeError
from .losses import contrast_loss
from .trainer import sgd_update


@dataclass
class Episode:
    n_way: int
    k_shot: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    support_idx: np.ndarray
    query_idx: np.ndarray
    classes: np.ndarray  # original label of each episode class


@dataclass
class AdaptConfig:
    iters: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-3
    tau_psco: float = 1.0


@dataclass
class EvalReport:
    n_way: int
    k_shot: int
    n_episodes: int
    mean_accuracy: float
    ci95: float
    per_episode: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "n_episodes": self.n_episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
        }


def confidence_interval95(per_episode) -> float:
    """1.96 * sample std / sqrt(n); zero for a single episode."""
    acc = np.asarray(per_episode, dtype=np.float64)
    if acc.size < 2:
        return 0.0
    return float(1.96 * acc.std(ddof=1) / np.sqrt(acc.size))


def sample_episode(dataset, n_way: int, k_shot: int, n_query: int, rng) -> Episode:
    if dataset.labels is None:
        raise EpisodeError("episodes need a labeled dataset")
    classes, counts = np.unique(dataset.labels, return_counts=True)
    eligible = classes[counts >= k_shot + n_query]
    if eligible.size < n_way:
        raise EpisodeError(
            f"{n_way}-way {k_shot}-shot with {n_query} queries needs {n_way} classes of "
            f">= {k_shot + n_query} samples; only {eligible.size} qualify"
        )
    chosen = rng.choice(eligible, size=n_way, replace=False)
    s_idx, q_idx, s_y, q_y = [], [], [], []
    for new_label, c in enumerate(chosen):
        pick = rng.choice(np.flatnonzero(dataset.labels == c), size=k_shot + n_query, replace=False)
        s_idx.append(pick[:k_shot])
        q_idx.append(pick[k_shot:])
        s_y.append(np.full(k_shot, new_label))
        q_y.append(np.full(n_query, new_label))
    s_idx, q_idx = np.concatenate(s_idx), np.concatenate(q_idx)
    return Episode(n_way, k_shot, dataset.x[s_idx], np.concatenate(s_y), dataset.x[q_idx],
                   np.concatenate(q_y), s_idx, q_idx, chosen)


def prototypes(z, labels, n_way):
    """Normalized per-class sums of the support representations."""
    sums = np.zeros((n_way, z.shape[1]))
    np.add.at(sums, labels, z)
    return l2_normalize(sums)


def prototype_predict(episode: Episode, state) -> np.ndarray:
    """Label of the prototype with the largest inner product (lowest class wins ties)."""
    q = encode_query(episode.query_x, state)
    z = encode_online_key(episode.support_x, state)
    scores = q @ prototypes(z, episode.support_y, episode.n_way).T
    return np.argmax(scores, axis=1)


def adapt(episode: Episode, state, iters: int = 50, lr: float = 0.01, tau_psco: float = 1.0, *,
          momentum: float = 0.9, weight_decay: float = 1e-3, trace=None):
    """Fine-tune projector and predictor on the support set; the backbone stays frozen.

    Supports act as queries against their own (constant, recomputed every
    iteration) projector outputs, with same-label pairs as positives. Returns
    a new state; ``trace`` (a list) receives the loss before each update.
    """
    if iters < 0:
        raise ConfigError(f"adaptation iterations must be >= 0, got {iters}")
    state = state.copy()
    trainable = {k: v for k, v in state.theta.items() if not k.startswith("f.")}
    velocity = {k: np.zeros_like(v) for k, v in trainable.items()}
    positives = (episode.support_y[:, None] == episode.support_y[None, :]).astype(np.float64)
    for _ in range(iters):
        tape = GradientTape()
        q = encode_query(episode.support_x, state, tape)
        z = encode_online_key(episode.support_x, state)
        loss = contrast_loss(q, z, positives, tau_psco)
        if trace is not None:
            trace.append(loss.value)
        grads = backward(tape, loss.grad_q)
        sgd_update(trainable, grads, velocity, lr, weight_decay, momentum)
    return state


def adaptation_loss(episode: Episode, state, tau_psco: float = 1.0) -> float:
    positives = (episode.support_y[:, None] == episode.support_y[None, :]).astype(np.float64)
    q = encode_query(episode.support_x, state)
    z = encode_online_key(episode.support_x, state)
    return contrast_loss(q, z, positives, tau_psco).value


def evaluate(dataset, state, n_way=5, k_shot=5, n_query=15, n_episodes=600,
             adapt_cfg: AdaptConfig | None = None, seed=0, predictor=None) -> EvalReport:
    """Mean episode accuracy with a 95% confidence interval.

    Episode ``e`` draws from ``default_rng([seed, e])``, and adaptation always
    starts from a fresh copy of ``state``, so episodes are independent.
    """
    predictor = predictor or prototype_predict
    accs = []
    for e in range(n_episodes):
        rng = np.random.default_rng([seed, e])
        episode = sample_episode(dataset, n_way, k_shot, n_query, rng)
        st = state
        if adapt_cfg is not None and adapt_cfg.iters > 0:
            st = adapt(episode, state, adapt_cfg.iters, adapt_cfg.lr, adapt_cfg.tau_psco,
                       momentum=adapt_cfg.momentum, weight_decay=adapt_cfg.weight_decay)
        accs.append(float(np.mean(predictor(episode, st) == episode.query_y)))
    mean = float(np.mean(accs)) if accs else float("nan")
    return EvalReport(n_way, k_shot, n_episodes, mean, confidence_interval95(accs), accs)
