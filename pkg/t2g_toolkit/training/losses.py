"""Losses and metrics."""

from __future__ import annotations

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import Value
from ..core.errors import DivergenceError, ShapeError
from ..core.models import TaskType


def loss(predictions: Value, targets: np.ndarray, task: TaskType, step: int | None = None) -> Value:
    """Batch-mean MSE for regression, cross-entropy over logits otherwise."""
    if not np.all(np.isfinite(predictions.data)):
        where = f" at step {step}" if step is not None else ""
        raise DivergenceError(f"non-finite predictions{where}", step=step)
    targets = np.asarray(targets)
    if task == "regression":
        if predictions.shape != targets.shape:
            raise ShapeError("mse", predictions.shape, targets.shape)
        return ad.mean(ad.square(ad.sub(predictions, Value(targets))))
    if predictions.ndim != 2 or predictions.shape[0] != targets.shape[0]:
        raise ShapeError("cross_entropy", predictions.shape, targets.shape)
    one_hot = np.eye(predictions.shape[1])[targets.astype(np.int64)]
    picked = ad.sum(ad.mul(ad.log_softmax(predictions), Value(one_hot)), axis=-1)
    return ad.neg(ad.mean(picked))


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(predictions, dtype=np.float64) - targets) ** 2)))


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == targets))
