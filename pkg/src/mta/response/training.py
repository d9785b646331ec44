"""Minibatch Adam training with validation-based early stopping.

Training is single-threaded over a deterministic seeded batch stream; the
returned parameters are the ones at the best validation loss seen. Every
source of randomness (user split, batch order, dropout masks) comes from one
generator seeded by the config, so identical seeds give bitwise-identical
trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Dataset, MtaError
from .base import Batch


class Diverged(MtaError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 256
    max_steps: int = 1000
    keep_prob: float = 0.75
    validation_fraction: float = 0.1
    patience: int = 10
    eval_every: int = 25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 < self.keep_prob <= 1.0):
            raise ValueError("keep_prob must be in (0, 1]")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.batch_size < 1 or self.max_steps < 0 or self.patience < 1 or self.eval_every < 1:
            raise ValueError("batch_size/patience/eval_every must be >= 1, max_steps >= 0")


@dataclass
class TrainLog:
    train_steps: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_steps: list[int] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_step: int | None = None
    best_val_loss: float | None = None
    stopped_early: bool = False


class Adam:
    """Standard Adam with bias correction; state keyed like the param dict."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def build_batch(dataset: Dataset, rows: np.ndarray, labels: np.ndarray) -> Batch:
    """Assemble one batch of users from the column-oriented impression log."""
    dims = dataset.dims
    n = len(rows)
    counts = np.zeros((n, dims.days, dims.brands * dims.positions), dtype=np.float64)
    log = dataset.impressions
    for i, r in enumerate(rows):
        sl = log.user_slice(int(r))
        counts[i, log.day[sl], log.brand[sl] * dims.positions + log.position[sl]] = log.count[sl]
    return Batch(
        counts=counts,
        prices=dataset.prices.values,
        features=dataset.features[rows],
        labels=labels[rows],
    )


def evaluate(model, dataset: Dataset, rows: np.ndarray, labels: np.ndarray, chunk: int = 2048) -> float:
    """Mean per-user negative log-likelihood over the given rows."""
    total = 0.0
    for lo in range(0, len(rows), chunk):
        batch = build_batch(dataset, rows[lo : lo + chunk], labels)
        loss, _ = model.loss_and_grad(batch, keep_prob=1.0)
        total += loss
    return total / max(1, len(rows))


def train(model, dataset: Dataset, config: TrainConfig):
    """Fit the model on the dataset's label grid; returns (model, TrainLog)."""
    labels = dataset.label_grid()
    if not labels.any() or labels.all():
        raise ValueError("dataset must contain both positive and negative labels")

    log = TrainLog()
    if config.max_steps == 0:
        return model, log

    rng = np.random.default_rng(config.seed)
    n = dataset.n_users
    perm = rng.permutation(n)
    n_val = int(round(n * config.validation_fraction))
    val_rows = perm[:n_val]
    train_rows = perm[n_val:]
    if len(train_rows) == 0:
        raise ValueError("validation fraction leaves no training users")

    adam = Adam(config.learning_rate)
    best_params: dict[str, np.ndarray] | None = None
    evals_since_best = 0
    order = rng.permutation(train_rows)
    pos = 0
    bs = min(config.batch_size, len(train_rows))

    for step in range(1, config.max_steps + 1):
        if pos + bs > len(order):
            order = rng.permutation(train_rows)
            pos = 0
        rows = order[pos : pos + bs]
        pos += bs

        batch = build_batch(dataset, rows, labels)
        loss, grads = model.loss_and_grad(batch, keep_prob=config.keep_prob, rng=rng)
        if not np.isfinite(loss):
            raise Diverged(f"non-finite training loss at step {step}")
        adam.step(model.params, grads)
        log.train_steps.append(step)
        log.train_loss.append(loss / len(rows))

        if n_val > 0 and (step % config.eval_every == 0 or step == config.max_steps):
            vloss = evaluate(model, dataset, val_rows, labels)
            log.val_steps.append(step)
            log.val_loss.append(vloss)
            if log.best_val_loss is None or vloss < log.best_val_loss:
                log.best_val_loss = vloss
                log.best_step = step
                best_params = {k: v.copy() for k, v in model.params.items()}
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best > config.patience:
                    log.stopped_early = True
                    break

    if best_params is not None:
        for k in model.params:
            model.params[k][...] = best_params[k]
    return model, log
