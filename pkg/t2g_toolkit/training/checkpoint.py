"""Checkpoint files: parameters plus a JSON header in one .npz archive."""

from __future__ import annotations

import json
import os
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from ..core.errors import CheckpointError
from ..core.models import FeatureSchema, ModelConfig, RunConfig
from ..nn.model import T2GFormer

FORMAT = "t2g-checkpoint"
FORMAT_VERSION = 1
META_KEY = "__meta__"
PARAM_PREFIX = "param/"


@dataclass
class Checkpoint:
    meta: dict
    parameters: dict[str, np.ndarray]

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema.model_validate(self.meta["schema"])

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.model_validate(self.meta["model_config"])

    @property
    def run_config(self) -> RunConfig | None:
        raw = self.meta.get("run_config")
        return RunConfig.model_validate(raw) if raw else None

    @property
    def topology_frozen(self) -> bool:
        return bool(self.meta.get("topology_frozen", False))


def save_checkpoint(
    path: Path,
    model: T2GFormer,
    run_config: RunConfig | None = None,
    preprocess_fingerprint: str | None = None,
    train_state: dict | None = None,
    rng_state: dict | None = None,
    parameters: dict[str, np.ndarray] | None = None,
) -> Path:
    """Write atomically: a crash never leaves a half-written checkpoint."""
    meta = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "model_config": model.config.model_dump(mode="json"),
        "schema": model.schema.model_dump(mode="json"),
        "schema_fingerprint": model.schema.fingerprint(),
        "preprocess_fingerprint": preprocess_fingerprint,
        "topology_frozen": model.topology_frozen,
        "train_state": train_state,
        "rng_state": rng_state,
        "run_config": run_config.model_dump(mode="json") if run_config else None,
    }
    arrays = {PARAM_PREFIX + name: array for name, array in (parameters or model.state_dict()).items()}
    arrays[META_KEY] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(archive[META_KEY].tobytes().decode())
            parameters = {
                key[len(PARAM_PREFIX) :]: archive[key] for key in archive.files if key.startswith(PARAM_PREFIX)
            }
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path} has format version {meta.get('version')}, expected {FORMAT_VERSION}")
    return Checkpoint(meta, parameters)


def restore_model(checkpoint: Checkpoint) -> T2GFormer:
    """Rebuild the model, load parameters and re-apply a frozen topology."""
    try:
        model = T2GFormer(checkpoint.schema, checkpoint.model_config)
    except ValidationError as e:
        raise CheckpointError(f"checkpoint header is invalid: {e}") from e
    model.load_state_dict(checkpoint.parameters)
    if checkpoint.topology_frozen:
        model.freeze_topology()
    return model


def check_fingerprint(checkpoint: Checkpoint, schema: FeatureSchema) -> None:
    expected = checkpoint.meta.get("schema_fingerprint")
    actual = schema.fingerprint()
    if expected != actual:
        raise CheckpointError(
            f"schema fingerprint mismatch: checkpoint was trained on {expected}, data gives {actual} "
            f"(columns, vocabularies or classes differ)"
        )
