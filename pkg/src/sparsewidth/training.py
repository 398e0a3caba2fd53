"""SGD training loop with per-epoch accuracy tracking.

Plain SGD with optional momentum on softmax cross-entropy. Mini-batches
are reshuffled every epoch from a dedicated seed; the trailing partial
batch is used, not dropped. Masked gradients keep frozen weights at
exactly zero for the whole run, which is asserted via mask fingerprints
at the end. There is no early stopping: the best test accuracy is simply
the max over the recorded epochs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .models import MlpModel, backward, forward, softmax_cross_entropy


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 100
    learning_rate: float = 0.1
    momentum: float = 0.0
    shuffle_seed: int = 0
    subset_size: int | None = None
    eval_batch: int = 4096

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise TrainerError("momentum must be in [0, 1)")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "shuffle_seed": self.shuffle_seed,
            "subset_size": self.subset_size,
            "eval_batch": self.eval_batch,
        }


@dataclass
class RunRecord:
    """Everything needed to audit or reproduce one training run."""

    config: dict
    seeds: dict
    train_accuracy: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None
    wall_clock_sec: float = 0.0
    mask_fingerprints: list[str] = field(default_factory=list)

    @property
    def best_test_accuracy(self) -> float:
        return max(self.test_accuracy) if self.test_accuracy else float("nan")

    @property
    def best_train_accuracy(self) -> float:
        return max(self.train_accuracy) if self.train_accuracy else float("nan")

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "train_accuracy": self.train_accuracy,
            "train_loss": self.train_loss,
            "test_accuracy": self.test_accuracy,
            "test_loss": self.test_loss,
            "best_train_accuracy": self.best_train_accuracy,
            "best_test_accuracy": self.best_test_accuracy,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "wall_clock_sec": self.wall_clock_sec,
            "mask_fingerprints": self.mask_fingerprints,
        }


def evaluate(model: MlpModel, ds: Dataset, batch: int = 4096) -> tuple[float, float]:
    """(mean loss, accuracy) over a dataset, in batches."""
    total_loss = 0.0
    correct = 0
    n = len(ds)
    for start in range(0, n, batch):
        xb = ds.images[start : start + batch]
        yb = ds.labels[start : start + batch]
        logits = forward(model, xb)
        total_loss += softmax_cross_entropy(logits, yb) * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / n, correct / n


def train(model: MlpModel, train_ds: Dataset, test_ds: Dataset, config: TrainConfig) -> RunRecord:
    """Run the full protocol and return the per-epoch record.

    A non-finite training loss aborts the run; the record keeps whatever
    epochs completed and carries abort_reason 'NonFiniteLoss'.
    """
    record = RunRecord(
        config=config.to_dict(),
        seeds={"model": model.seed, "shuffle": config.shuffle_seed},
    )
    start_prints = [m.fingerprint() for m in model.masks if m is not None]
    rng = np.random.Generator(np.random.PCG64(config.shuffle_seed))
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases] if model.biases is not None else None
    n = len(train_ds)
    t0 = time.perf_counter()

    for _ in range(config.epochs):
        perm = rng.permutation(n)
        nonfinite = False
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = backward(model, train_ds.images[idx], train_ds.labels[idx])
            if not np.isfinite(loss):
                nonfinite = True
                break
            if config.momentum > 0.0:
                for w, v, g in zip(model.weights, vel_w, grads.weights):
                    v *= config.momentum
                    v += g
                    w -= config.learning_rate * v
                if vel_b is not None:
                    for b, v, g in zip(model.biases, vel_b, grads.biases):
                        v *= config.momentum
                        v += g
                        b -= config.learning_rate * v
            else:
                for w, g in zip(model.weights, grads.weights):
                    w -= config.learning_rate * g
                if model.biases is not None:
                    for b, g in zip(model.biases, grads.biases):
                        b -= config.learning_rate * g
        if nonfinite:
            record.aborted = True
            record.abort_reason = "NonFiniteLoss"
            break
        tr_loss, tr_acc = evaluate(model, train_ds, config.eval_batch)
        te_loss, te_acc = evaluate(model, test_ds, config.eval_batch)
        record.train_loss.append(tr_loss)
        record.train_accuracy.append(tr_acc)
        record.test_loss.append(te_loss)
        record.test_accuracy.append(te_acc)

    record.wall_clock_sec = time.perf_counter() - t0
    end_prints = [m.fingerprint() for m in model.masks if m is not None]
    if end_prints != start_prints:
        raise TrainerError("mask changed during training")
    for w, m in zip(model.weights, model.masks):
        if m is not None and np.any(w[~m.keep] != 0.0):
            raise TrainerError("frozen weights moved during training")
    record.mask_fingerprints = end_prints
    return record
