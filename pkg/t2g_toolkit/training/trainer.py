"""Mini-batch training with early stopping and topology freezing."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..config import batch_size_for
from ..core import autodiff as ad
from ..core.autodiff import Value
from ..core.errors import DivergenceError
from ..core.models import MetricRecord, SplitName, TrainConfig
from ..core.optim import AdamW
from ..data.io import PreparedDataset, SplitData
from ..nn.model import T2GFormer, seed_streams
from .losses import accuracy, loss, rmse

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 1024


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_val_metric: float | None = None
    best_epoch: int = 0
    evals_without_improvement: int = 0
    topology_frozen: bool = False
    frozen_at_epoch: int | None = None
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    state: TrainState
    history: list[MetricRecord]
    best_parameters: dict[str, np.ndarray]
    val_metric: float
    test_metric: float
    optimizer: AdamW
    rng_state: dict = field(default_factory=dict)


EpochCallback = Callable[[int, T2GFormer, TrainState], None]


def predict(model: T2GFormer, split: SplitData, batch_size: int = EVAL_BATCH_SIZE) -> np.ndarray:
    """Evaluation-mode predictions for a whole split, in float64."""
    chunks = []
    for start in range(0, len(split), batch_size):
        stop = start + batch_size
        out = model.forward(split.x_num[start:stop], split.x_cat[start:stop], training=False)
        chunks.append(out.predictions.data.astype(np.float64))
    return np.concatenate(chunks)


def score(predictions: np.ndarray, data: PreparedDataset, split: SplitName) -> float:
    """RMSE in original target units, or accuracy."""
    if data.schema.task == "regression":
        return rmse(data.state.inverse_target(predictions), data.raw_targets[split])
    return accuracy(predictions, data.splits[split].y)


def evaluate(model: T2GFormer, data: PreparedDataset, split: SplitName) -> float:
    return score(predict(model, data.splits[split]), data, split)


def _evaluate_with_loss(model: T2GFormer, data: PreparedDataset, split: SplitName) -> tuple[float, float]:
    predictions = predict(model, data.splits[split])
    split_loss = loss(Value(predictions), data.splits[split].y, data.schema.task).item()
    return score(predictions, data, split), split_loss


def _improved(metric: float, best: float | None, task: str) -> bool:
    if best is None:
        return True
    return metric < best if task == "regression" else metric > best


def _append(path: Path | None, record: MetricRecord) -> None:
    if path is None:
        return
    with path.open("a") as f:
        f.write(record.model_dump_json() + "\n")


def train(
    model: T2GFormer,
    data: PreparedDataset,
    config: TrainConfig,
    history_path: Path | None = None,
    on_epoch: EpochCallback | None = None,
) -> TrainResult:
    """Train until early stopping or max_epochs; restore the best-val parameters.

    The metric history is appended line by line to `history_path`, so a
    diverged run leaves everything up to the failing epoch on disk.
    """
    task = data.schema.task
    streams = seed_streams(config.seed)
    shuffle_rng, dropout_rng = streams["shuffle"], streams["dropout"]
    optimizer = AdamW(
        model.named_parameters(),
        {"backbone": config.lr_backbone, "column_embedding": config.lr_column_embedding},
        config.weight_decay,
    )
    batch_size = config.batch_size or batch_size_for(data.dataset_key)
    train_split = data.splits["train"]
    if history_path is not None:
        history_path.parent.mkdir(parents=True, exist_ok=True)
        history_path.write_text("")

    state = TrainState()
    history: list[MetricRecord] = []
    best_parameters = model.state_dict()

    with ad.precision(config.precision):
        for epoch in range(1, config.max_epochs + 1):
            state.epoch = epoch
            order = shuffle_rng.permutation(len(train_split))
            losses = []
            for start in range(0, len(order), batch_size):
                batch = train_split.take(order[start : start + batch_size])
                state.step += 1
                try:
                    out = model.forward(batch.x_num, batch.x_cat, training=True, rng=dropout_rng)
                    batch_loss = loss(out.predictions, batch.y, task, step=state.step)
                    optimizer.zero_grad()
                    ad.backward(batch_loss)
                    optimizer.step()
                except DivergenceError as e:
                    logger.error("Training diverged at epoch %d, step %d: %s", epoch, state.step, e)
                    raise
                losses.append(batch_loss.item())
            train_loss = float(np.mean(losses))

            if epoch % config.eval_every == 0 or epoch == config.max_epochs:
                val_metric, val_loss = _evaluate_with_loss(model, data, "val")
                record = MetricRecord(
                    epoch=epoch,
                    split="val",
                    metric=val_metric,
                    loss=val_loss,
                    train_loss=train_loss,
                    frozen=model.topology_frozen,
                )
                history.append(record)
                _append(history_path, record)
                logger.debug("epoch %d: train_loss=%.5f val_%s=%.5f", epoch, train_loss, data.schema.metric, val_metric)

                if _improved(val_metric, state.best_val_metric, task):
                    state.best_val_metric = val_metric
                    state.best_epoch = epoch
                    state.evals_without_improvement = 0
                    best_parameters = model.state_dict()
                else:
                    state.evals_without_improvement += 1
                if config.freeze_epoch is None and state.evals_without_improvement >= config.freeze_patience:
                    _freeze(model, state, epoch)

            if config.freeze_epoch is not None and epoch >= config.freeze_epoch:
                _freeze(model, state, epoch)
            if on_epoch is not None:
                on_epoch(epoch, model, state)
            if state.evals_without_improvement >= config.early_stop_patience:
                state.stopped_early = True
                logger.info("Early stop at epoch %d, best epoch %d", epoch, state.best_epoch)
                break

        if model.topology_frozen:
            # A stays as fixed at the freeze, even if the best epoch came earlier
            current = model.state_dict()
            for p in model.topology_parameters():
                best_parameters[p.name] = current[p.name]
        model.load_state_dict(best_parameters)
        test_metric, test_loss = _evaluate_with_loss(model, data, "test")

    record = MetricRecord(
        epoch=state.best_epoch,
        split="test",
        metric=test_metric,
        loss=test_loss,
        frozen=model.topology_frozen,
    )
    history.append(record)
    _append(history_path, record)
    rng_state = {name: rng.bit_generator.state for name, rng in streams.items()}
    return TrainResult(state, history, best_parameters, state.best_val_metric, test_metric, optimizer, rng_state)


def _freeze(model: T2GFormer, state: TrainState, epoch: int) -> None:
    if state.topology_frozen:
        return
    model.freeze_topology()
    state.topology_frozen = True
    state.frozen_at_epoch = epoch
    logger.info("Topology frozen after epoch %d", epoch)
