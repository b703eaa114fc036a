"""Losses, the training loop and checkpoint files."""

from .checkpoint import Checkpoint, check_fingerprint, load_checkpoint, restore_model, save_checkpoint
from .losses import accuracy, loss, rmse
from .trainer import TrainResult, TrainState, evaluate, predict, train

__all__ = [
    "Checkpoint",
    "check_fingerprint",
    "load_checkpoint",
    "restore_model",
    "save_checkpoint",
    "accuracy",
    "loss",
    "rmse",
    "TrainResult",
    "TrainState",
    "evaluate",
    "predict",
    "train",
]
