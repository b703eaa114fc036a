# T2G Toolkit Core - differentiation substrate, optimizer, models and errors
from .autodiff import MASK_VALUE, GateTape, Parameter, Value, backward, gate_tape, precision
from .errors import CheckpointError, ConfigError, DivergenceError, SchemaError, ShapeError
from .models import FeatureSchema, ModelConfig, RunConfig, TrainConfig
from .optim import AdamW

__all__ = [
    "MASK_VALUE",
    "GateTape",
    "Parameter",
    "Value",
    "backward",
    "gate_tape",
    "precision",
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "SchemaError",
    "ShapeError",
    "FeatureSchema",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "AdamW",
]
