"""Shared epoch loop for the quantum mixture and the classical baselines."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from tqdm import tqdm

from config.settings import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    BATCH_SIZE,
    EPOCHS,
    GRADIENT_METHOD,
    GRADIENT_METHODS,
    LEARNING_RATE,
    SEED,
    THREADS,
    TRAIN_SELECTION_SIZE,
)
from pipelines.optim import Adam

logger = logging.getLogger(__name__)

# batch indices -> (mean loss, flat gradient, model outputs f for the batch)
LossAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


@dataclass
class TrainConfig:
    batch_size: int = BATCH_SIZE
    epochs: int = EPOCHS
    learning_rate: float = LEARNING_RATE
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    seed: int = SEED
    train_subset_size: int = TRAIN_SELECTION_SIZE
    gradient_method: str = GRADIENT_METHOD
    threads: int = THREADS
    final_train_eval: bool = True

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ValueError("Adam needs betas in [0, 1) and eps > 0")
        if self.train_subset_size < 1:
            raise ValueError(f"train_subset_size must be >= 1, got {self.train_subset_size}")
        if self.gradient_method not in GRADIENT_METHODS:
            raise ValueError(f"gradient_method must be one of {GRADIENT_METHODS}, got {self.gradient_method!r}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        return self


@dataclass
class EpochRecord:
    epoch: int
    running_train_acc: float
    test_acc: float
    mean_loss: float
    epoch_seconds: float


@dataclass
class Metrics:
    model: str
    records: list[EpochRecord] = field(default_factory=list)
    final_train_accuracy: float | None = None

    @property
    def final_test_accuracy(self) -> float | None:
        return self.records[-1].test_acc if self.records else None

    def to_frame(self, timing: bool = False) -> pd.DataFrame:
        """One row per epoch; wall-clock seconds only on request so reruns give identical tables."""
        columns = ["model", "epoch", "running_train_acc", "test_acc", "mean_loss"]
        if timing:
            columns.append("epoch_seconds")
        rows = [{"model": self.model, **asdict(r)} for r in self.records]
        return pd.DataFrame(rows, columns=columns)

    def compute_series(self, num_experts: int) -> pd.DataFrame:
        """Test accuracy against compute, measured as epochs times experts."""
        df = self.to_frame()[["epoch", "test_acc"]]
        df.insert(0, "num_experts", num_experts)
        df.insert(2, "compute", df["epoch"] * num_experts)
        return df


def predict_sign(f: np.ndarray) -> np.ndarray:
    """Binary prediction from model outputs; a tie at 0 goes to +1."""
    return np.where(np.asarray(f) >= 0.0, 1, -1)


def fit(
    parameters: np.ndarray,
    loss_and_grad: LossAndGrad,
    train_labels: np.ndarray,
    evaluate_test: Callable[[], float],
    cfg: TrainConfig,
    model_name: str,
    evaluate_train: Callable[[], float] | None = None,
) -> Metrics:
    """Adam over shuffled mini-batches of the training selection.

    `parameters` is updated in place. Every epoch visits each training position once in
    an order drawn from the run seed; running accuracy is tallied on the batches as the
    parameters move, test accuracy is taken with the parameters frozen at epoch end.
    """
    cfg.validate()
    train_labels = np.asarray(train_labels)
    num_train = train_labels.shape[0]
    if num_train == 0:
        raise ValueError("training selection is empty")
    optimizer = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng((cfg.seed, 1))
    metrics = Metrics(model_name)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(num_train)
        correct = 0
        loss_sum = 0.0
        bar = tqdm(range(0, num_train, cfg.batch_size), desc=f"{model_name} epoch {epoch}", leave=False, disable=None)
        for offset in bar:
            idx = order[offset:offset + cfg.batch_size]
            loss, grad, f = loss_and_grad(idx)
            correct += int(np.sum(predict_sign(f) == train_labels[idx]))
            loss_sum += loss * idx.size
            optimizer.step(parameters, grad)
        test_acc = evaluate_test()
        record = EpochRecord(epoch, correct / num_train, test_acc, loss_sum / num_train, time.perf_counter() - start)
        metrics.records.append(record)
        logger.info(
            "%s epoch %d: running train acc %.4f, test acc %.4f, mean loss %.5f (%.1fs)",
            model_name, epoch, record.running_train_acc, record.test_acc, record.mean_loss, record.epoch_seconds,
        )

    if cfg.final_train_eval and evaluate_train is not None:
        metrics.final_train_accuracy = evaluate_train()
        logger.info("%s final train accuracy %.4f", model_name, metrics.final_train_accuracy)
    return metrics
