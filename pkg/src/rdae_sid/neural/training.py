"""Minibatch training with validation-based early stopping."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .._seeding import rng_for
from ..errors import ArgumentError, NumericError
from .optim import make_optimizer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    learning_rate: float = 0.001
    patience: int = 5
    loss_weight_lambda: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    encoder_hidden: int = 40
    time_hidden: int = 8
    rdae_layers: int = 1
    snn_hidden: int = 1000
    dropout: float = 0.3
    l2_lambda: float = 0.01
    per_bin_norm: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience", "encoder_hidden", "time_hidden", "rdae_layers", "snn_hidden"):
            if int(getattr(self, name)) <= 0:
                raise ArgumentError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be positive")
        if self.loss_weight_lambda < 0 or self.l2_lambda < 0:
            raise ArgumentError("loss weights must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ArgumentError("dropout must lie in [0, 1)")
        if self.patience > self.epochs:
            raise ArgumentError("patience cannot exceed epochs")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epochs_without_improvement = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.epochs_without_improvement = 0
            return True
        self.epochs_without_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_without_improvement >= self.patience


def replay_early_stopping(val_losses, patience: int, max_epochs: int) -> tuple[int, int]:
    """(epochs actually run, best epoch) for a given validation-loss sequence, 1-based."""
    es = EarlyStopping(patience)
    for loss in list(val_losses)[:max_epochs]:
        es.update(loss)
        if es.should_stop:
            break
    return es.epoch, es.best_epoch


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    epochs_run: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _take(data: dict, idx: np.ndarray) -> dict:
    return {k: v[idx] for k, v in data.items()}


def _size(data: dict) -> int:
    sizes = {v.shape[0] for v in data.values()}
    if len(sizes) != 1:
        raise ArgumentError("dataset arrays must be aligned")
    return sizes.pop()


def train(objective, train_data: dict, val_data: dict, config: TrainConfig, stream: tuple = ()):
    """Fit ``objective`` in place and restore the epoch with the lowest validation loss.

    ``stream`` is mixed into the seed so runs that share a config still draw
    independent shuffles and dropout masks. Returns (objective, history).
    """
    n = _size(train_data) if train_data else 0
    if n == 0 or not val_data or _size(val_data) == 0:
        raise ArgumentError("training and validation sets must be non-empty")
    params = objective.parameters()
    optimizer = make_optimizer(config.optimizer, params, config.learning_rate)
    shuffle_rng = rng_for("shuffle", config.seed, *stream)
    dropout_rng = rng_for("dropout", config.seed, *stream)
    stopper = EarlyStopping(config.patience)
    history = History()
    best = {k: v.copy() for k, v in params.items()}

    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = objective.loss_and_grads(_take(train_data, idx), dropout_rng)
            if not math.isfinite(loss):
                raise NumericError(f"training loss diverged at epoch {stopper.epoch + 1}")
            optimizer.step(grads)
            total += loss * idx.size
        val = objective.eval_loss(val_data)
        if not math.isfinite(val):
            raise NumericError(f"validation loss diverged at epoch {stopper.epoch + 1}")
        history.train_loss.append(total / n)
        history.val_loss.append(val)
        if stopper.update(val):
            best = {k: v.copy() for k, v in params.items()}
        if stopper.should_stop:
            break

    for k, v in params.items():
        v[...] = best[k]
    history.best_epoch = stopper.best_epoch
    history.best_val_loss = stopper.best
    history.epochs_run = stopper.epoch
    return objective, history
