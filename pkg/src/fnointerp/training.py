"""Optimization loop: AdamW, reduce-on-plateau scheduling, RMSE, early stop.

Training is deterministic given the config seed: batch order and any
per-epoch masking derive from seeded streams, and the fused optimizer kernel
operates on each model's flat parameter buffer.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backend import KERNELS
from .tensor import GradientTape, Tensor


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite."""


@dataclass(frozen=True)
class SchedulerConfig:
    factor: float = 0.1
    patience: int = 10
    threshold: float = 1e-4   # relative improvement needed to reset patience
    min_lr: float = 1e-6


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 50
    threshold: float = 0.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 1000
    batch_size: int | None = None     # None trains full-batch
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    early_stop: EarlyStopConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning rate and epochs must be positive")
        if self.scheduler.patience < 1:
            raise ValueError("scheduler patience must be >= 1")
        if self.early_stop is not None and self.early_stop.patience < 1:
            raise ValueError("early-stop patience must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    aborted: str | None = None

    def append(self, train, val, lr, wall):
        self.train_loss.append(train)
        self.val_loss.append(val)
        self.lr.append(lr)
        self.wall.append(wall)

    def jsonl(self) -> str:
        lines = []
        for i in range(len(self.train_loss)):
            lines.append(json.dumps({
                "epoch": i, "train_loss": self.train_loss[i],
                "val_loss": self.val_loss[i], "lr": self.lr[i],
                "wall_s": round(self.wall[i], 4)}))
        return "\n".join(lines) + ("\n" if lines else "")


def rmse(pred: Tensor, target, mask=None) -> Tensor:
    """sqrt(mean squared error) over all (or mask-selected) elements."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    if mask is not None:
        mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
        active = float(mask_arr.sum())
        if active < 1:
            raise ValueError("mask selects no elements")
        sq = T.tsum(diff * diff * Tensor(mask_arr))
        return T.sqrt(sq * Tensor(1.0 / active))
    return T.sqrt(T.tmean(diff * diff))


class AdamW:
    """Decoupled weight decay Adam over a flat float64 parameter vector."""

    def __init__(self, n_params: int, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, flat_params: np.ndarray, flat_grad: np.ndarray) -> None:
        if not np.all(np.isfinite(flat_grad)):
            raise TrainingDiverged("non-finite gradient")
        self.t += 1
        b1, b2 = self.cfg.betas
        KERNELS.adamw_update(flat_params, flat_grad, self.m, self.v,
                             self.lr, b1, b2, self.cfg.eps,
                             self.cfg.weight_decay, self.t)


def adamw_step(params: np.ndarray, grads: np.ndarray, state: dict, cfg: TrainConfig):
    """Pure single-step form: returns (new_params, new_state)."""
    p = params.astype(np.float64).copy()
    m = state.get("m", np.zeros_like(p)).copy()
    v = state.get("v", np.zeros_like(p)).copy()
    t = state.get("t", 0) + 1
    b1, b2 = cfg.betas
    KERNELS.adamw_update(p, np.asarray(grads, dtype=np.float64), m, v,
                         state.get("lr", cfg.learning_rate), b1, b2,
                         cfg.eps, cfg.weight_decay, t)
    return p, {"m": m, "v": v, "t": t, "lr": state.get("lr", cfg.learning_rate)}


class ReduceLROnPlateau:
    """Multiply lr by ``factor`` after ``patience`` epochs without relative
    improvement better than ``threshold``; never drops below ``min_lr``."""

    def __init__(self, cfg: SchedulerConfig, lr: float):
        self.cfg = cfg
        self.lr = lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, monitored: float) -> float:
        if not np.isfinite(monitored):
            raise ValueError("monitored loss must be finite")
        if monitored < self.best * (1.0 - self.cfg.threshold):
            self.best = monitored
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.cfg.patience:
                self.lr = max(self.lr * self.cfg.factor, self.cfg.min_lr)
                self.bad_epochs = 0
        return self.lr


def array_batches(inputs: np.ndarray, targets: np.ndarray,
                  batch_size: int | None, shuffle: bool = True):
    """Batch source over fixed arrays with seeded per-epoch shuffling."""
    n = len(inputs)

    def source(epoch: int, rng: np.random.Generator):
        order = rng.permutation(n) if shuffle and batch_size is not None else np.arange(n)
        if batch_size is None:
            return [(inputs, targets, None)]
        return [(inputs[order[i:i + batch_size]], targets[order[i:i + batch_size]], None)
                for i in range(0, n, batch_size)]

    return source


@dataclass
class TrainResult:
    history: TrainHistory
    best_epoch: int
    best_monitored: float
    param_hash: str

    @property
    def diverged(self) -> bool:
        return self.history.aborted is not None


def _hash_params(flat: np.ndarray) -> str:
    return hashlib.sha256(flat.tobytes()).hexdigest()[:16]


def train(model, batch_source, cfg: TrainConfig, validation=None) -> TrainResult:
    """Run the loop; the model ends up holding the best checkpoint.

    ``batch_source`` is either ``(inputs, targets)`` arrays (batched per
    ``cfg.batch_size``) or a callable ``(epoch, rng) -> [(x, y, mask), ...]``.
    ``validation``, when given, is called as ``validation(model)`` after each
    epoch and its value is monitored for scheduling, early stopping, and
    best-checkpoint selection; otherwise the training loss is monitored.
    """
    if isinstance(batch_source, tuple):
        batch_source = array_batches(*batch_source, cfg.batch_size)

    opt = AdamW(model.flat.size, cfg)
    sched = ReduceLROnPlateau(cfg.scheduler, cfg.learning_rate)
    history = TrainHistory()
    best = np.inf
    best_epoch = -1
    best_flat = model.get_flat()
    stall = 0

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                           spawn_key=(epoch,)))
        losses = []
        try:
            for bx, by, bmask in batch_source(epoch, rng):
                with GradientTape() as tape:
                    out = model.forward(Tensor(bx))
                    loss = rmse(out, by, bmask)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
                grads = tape.gradients(loss, model.parameters())
                opt.lr = sched.lr
                opt.step(model.flat, model.flat_gradient(grads))
                losses.append(value)
        except TrainingDiverged as exc:
            history.aborted = str(exc)
            break

        train_loss = float(np.mean(losses)) if losses else np.nan
        val_loss = float(validation(model)) if validation is not None else None
        monitored = val_loss if val_loss is not None else train_loss
        sched.step(monitored)
        history.append(train_loss, val_loss, sched.lr, time.perf_counter() - tic)

        improved = monitored < best * (1.0 - (cfg.early_stop.threshold if cfg.early_stop else 0.0))
        if monitored < best:
            best = monitored
            best_epoch = epoch
            best_flat = model.get_flat()
        stall = 0 if improved else stall + 1
        if cfg.early_stop is not None and stall > cfg.early_stop.patience:
            break

    model.set_flat(best_flat)
    return TrainResult(history, best_epoch, float(best), _hash_params(model.flat))
