"""Meta-training loop: pseudo-task construction, combined loss, SGD, EMA, queue update."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .augment import augment
from .config import TrainConfig
from .data import Dataset
from .encoder import (
    EncoderState,
    GradientTape,
    backward,
    ema_update,
    encode_key,
    encode_online_key,
    encode_query,
    init_encoder,
)
from .errors import ConfigError, DataError, DiagnosticsError, NumericError
from .losses import moco_loss, psco_loss, total_loss
from .task_queue import MomentumQueue, build_task, enqueue, pseudo_label_quality, queue_init, shot_overlap_ratio

log = logging.getLogger(__name__)

# independent RNG streams derived from the master seed
_SHUFFLE, _STEP, _QUEUE, _INIT = 0, 1, 2, 3

LOG_FIELDS = ("epoch", "lr", "loss_total", "loss_psco", "loss_moco", "pseudo_label_quality",
              "shot_overlap_ratio")


def cosine_lr(t, total, lr0):
    if t < 0 or t > total:
        raise ConfigError(f"epoch {t} outside [0, {total}]")
    if total == 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


def sgd_update(theta, grads, velocity, lr, weight_decay, momentum):
    """Heavy-ball SGD with L2 weight decay folded into the gradient, in place."""
    for k, p in theta.items():
        g = grads[k] + weight_decay * p if k in grads else weight_decay * p
        v = velocity[k]
        v *= momentum
        v += g
        p -= lr * v


@dataclass
class StepResult:
    loss_total: float
    loss_psco: float
    loss_moco: float
    shot_overlap_ratio: float
    pseudo_label_quality: float | None = None
    task: object = None


def new_encoder(cfg: TrainConfig, input_dim: int) -> EncoderState:
    mc = cfg.model
    return init_encoder(input_dim, mc.backbone_hidden, mc.proj_hidden, cfg.d, mc.pred_hidden,
                        mc.activation, seed=[cfg.seed, _INIT])


def train_step(batch, state: EncoderState, queue: MomentumQueue, cfg: TrainConfig, rng, *,
               velocity, lr, labels=None, image_shape=None, step_index=0):
    """One iteration; mutates ``state``, ``velocity`` and ``queue`` in place."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    tape = GradientTape()
    Q = encode_query(augment(x, cfg.aug.strong(), rng, image_shape), state, tape)
    x_weak = augment(x, cfg.aug.weak(), rng, image_shape)
    Z = encode_key(x_weak, state) if cfg.use_momentum else encode_online_key(x_weak, state)

    try:
        task = build_task(Z, queue, cfg.K, cfg.sinkhorn)
        psco = psco_loss(Q, task, cfg.tau_psco)
        moco = moco_loss(Q, Z, queue.slots, cfg.tau_moco)
        total = total_loss(psco, moco)
    except NumericError as exc:
        raise NumericError(f"step {step_index}: {exc}") from None

    grads = backward(tape, total.grad_q)
    sgd_update(state.theta, grads, velocity, lr, cfg.weight_decay, cfg.sgd_momentum)
    ema_update(state, cfg.m)

    quality = None
    if labels is not None:
        try:
            quality = pseudo_label_quality(task, queue.true_labels, labels)
        except DiagnosticsError:
            pass  # supports still drawn from random-init rows
    result = StepResult(total.value, psco.value, moco.value, shot_overlap_ratio(task), quality, task)
    enqueue(queue, Z, labels)
    return result, state, queue


class Trainer:
    """Owns all mutable training state so that it can be snapshotted and resumed."""

    def __init__(self, cfg: TrainConfig, dataset: Dataset, state: EncoderState | None = None):
        self.cfg = cfg.validate()
        self.dataset = dataset
        if len(dataset) < cfg.N:
            raise DataError(f"dataset has {len(dataset)} samples, fewer than the batch size {cfg.N}")
        self.state = state if state is not None else new_encoder(cfg, dataset.dim)
        self.queue = queue_init(cfg.M, cfg.d, seed=[cfg.seed, _QUEUE])
        self.velocity = {k: np.zeros_like(v) for k, v in self.state.theta.items()}
        self.epoch = 0
        self.global_step = 0
        self.log = []
        # per-step total loss of this process only (not persisted in snapshots)
        self.step_losses = []

    @property
    def steps_per_epoch(self) -> int:
        return len(self.dataset) // self.cfg.N

    def run_epoch(self) -> dict:
        cfg, ds = self.cfg, self.dataset
        lr = cosine_lr(self.epoch, cfg.epochs, cfg.lr0)
        order = np.random.default_rng([cfg.seed, _SHUFFLE, self.epoch]).permutation(len(ds))
        totals, pscos, mocos, overlaps, qualities = [], [], [], [], []
        for b in range(self.steps_per_epoch):
            idx = order[b * cfg.N:(b + 1) * cfg.N]
            rng = np.random.default_rng([cfg.seed, _STEP, self.global_step])
            res, _, _ = train_step(
                ds.x[idx], self.state, self.queue, cfg, rng,
                velocity=self.velocity, lr=lr,
                labels=None if ds.labels is None else ds.labels[idx],
                image_shape=ds.image_shape, step_index=self.global_step,
            )
            self.global_step += 1
            self.step_losses.append(res.loss_total)
            totals.append(res.loss_total)
            pscos.append(res.loss_psco)
            mocos.append(res.loss_moco)
            overlaps.append(res.shot_overlap_ratio)
            if res.pseudo_label_quality is not None:
                qualities.append(res.pseudo_label_quality)
        self.epoch += 1
        record = {
            "epoch": self.epoch,
            "lr": lr,
            "loss_total": float(np.mean(totals)),
            "loss_psco": float(np.mean(pscos)),
            "loss_moco": float(np.mean(mocos)),
            "pseudo_label_quality": float(np.mean(qualities)) if qualities else None,
            "shot_overlap_ratio": float(np.mean(overlaps)),
        }
        self.log.append(record)
        log.info("epoch %d loss %.4f overlap %.4f", self.epoch, record["loss_total"], record["shot_overlap_ratio"])
        return record

    def fit(self, until_epoch: int | None = None):
        stop = self.cfg.epochs if until_epoch is None else min(until_epoch, self.cfg.epochs)
        while self.epoch < stop:
            self.run_epoch()
        return self.state, self.log


def train(dataset: Dataset, cfg: TrainConfig):
    """Train for ``cfg.epochs`` epochs; returns the last-epoch state and the per-epoch log."""
    return Trainer(cfg, dataset).fit()
