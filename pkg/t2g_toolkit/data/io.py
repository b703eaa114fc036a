"""Dataset ingestion, schema files and train-split preprocessing."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError
from sklearn.preprocessing import QuantileTransformer, StandardScaler

from ..core.errors import SchemaError
from ..core.models import FeatureSchema

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
# Single-file inputs are split train/val/test in these proportions
SPLIT_FRACTIONS = (0.64, 0.16, 0.20)
BUNDLED_SCHEMAS = ("ca", "ch")


@dataclass
class SplitData:
    """One split as model-ready arrays."""
    x_num: np.ndarray  # (rows, n_numerical) float64
    x_cat: np.ndarray  # (rows, n_categorical) int64
    y: np.ndarray  # float64 for regression, int64 class indices otherwise

    def __len__(self) -> int:
        return len(self.y)

    def take(self, index: np.ndarray) -> "SplitData":
        return SplitData(self.x_num[index], self.x_cat[index], self.y[index])


@dataclass
class TabularDataset:
    schema: FeatureSchema
    splits: dict[str, SplitData]
    source: Path | None = None

    @property
    def split_sizes(self) -> dict[str, int]:
        return {name: len(split) for name, split in self.splits.items()}


@dataclass
class PreprocessState:
    """Statistics fit on the train split only."""
    mode: str
    scaler: StandardScaler | None = None
    quantile: QuantileTransformer | None = None
    target_scaler: StandardScaler | None = None
    clamped: list[str] = field(default_factory=list)

    def transform_numerical(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] == 0:
            return x
        if self.quantile is not None:
            return self.quantile.transform(x)
        return self.scaler.transform(x)

    def transform_target(self, y: np.ndarray) -> np.ndarray:
        if self.target_scaler is None:
            return y
        return self.target_scaler.transform(y.reshape(-1, 1)).ravel()

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        if self.target_scaler is None:
            return y
        return self.target_scaler.inverse_transform(np.asarray(y, dtype=np.float64).reshape(-1, 1)).ravel()

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.mode.encode())
        for array in (
            getattr(self.scaler, "mean_", None),
            getattr(self.scaler, "scale_", None),
            getattr(self.quantile, "quantiles_", None),
            getattr(self.target_scaler, "mean_", None),
            getattr(self.target_scaler, "scale_", None),
        ):
            if array is not None:
                digest.update(np.ascontiguousarray(array, dtype=np.float64).tobytes())
        return digest.hexdigest()[:16]


@dataclass
class PreparedDataset:
    """Transformed splits plus the raw targets metrics are reported against."""
    schema: FeatureSchema
    splits: dict[str, SplitData]
    raw_targets: dict[str, np.ndarray]
    state: PreprocessState
    dataset_key: str | None = None


# === Schemas ===


def load_schema(source: str | Path) -> FeatureSchema:
    """Read a JSON schema file, or a bundled one by key ('ca', 'ch')."""
    if isinstance(source, str) and source.lower() in BUNDLED_SCHEMAS:
        text = resources.files("t2g_toolkit.data").joinpath("schemas", f"{source.lower()}.json").read_text()
        origin = f"bundled schema {source!r}"
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"schema file not found: {path}")
        text = path.read_text()
        origin = str(path)
    try:
        return FeatureSchema.model_validate(json.loads(text))
    except (json.JSONDecodeError, ValidationError) as e:
        raise SchemaError(f"invalid schema in {origin}: {e}") from e


# === Loading ===


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path} is empty") from None


def _split_frame(frame: pd.DataFrame, seed: int) -> dict[str, pd.DataFrame]:
    order = np.random.default_rng(seed).permutation(len(frame))
    n_test = round(len(frame) * SPLIT_FRACTIONS[2])
    n_val = round(len(frame) * SPLIT_FRACTIONS[1])
    test, val, train = np.split(order, [n_test, n_test + n_val])
    return {"train": frame.iloc[train], "val": frame.iloc[val], "test": frame.iloc[test]}


def _numerical(frame: pd.DataFrame, column: str, split: str) -> np.ndarray:
    raw = frame[column]
    missing = raw.isna()
    if missing.any():
        raise SchemaError(f"column {column!r} has {int(missing.sum())} missing values in the {split} split")
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna()
    if bad.any():
        example = raw[bad].iloc[0]
        raise SchemaError(f"column {column!r} has unparseable numeric value {example!r} in the {split} split")
    return parsed.to_numpy(dtype=np.float64)


def _codes(values: pd.Series, vocabulary: list[str]) -> np.ndarray:
    """Indices into `vocabulary`; anything unseen maps to len(vocabulary)."""
    codes = pd.Categorical(values.fillna("").astype(str), categories=vocabulary).codes.astype(np.int64)
    codes[codes < 0] = len(vocabulary)
    return codes


def load_dataset(path: str | Path, schema: FeatureSchema, split_seed: int = 0) -> TabularDataset:
    """Read a split directory ({train,val,test}.csv) or a single CSV.

    Vocabularies and class labels come from the train split and are stored
    on the returned schema; unseen categories get the unknown index.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset path not found: {path}")
    if path.is_dir():
        frames = {}
        for split in SPLITS:
            file = path / f"{split}.csv"
            if not file.exists():
                raise SchemaError(f"split file not found: {file}")
            frames[split] = _read_csv(file)
    else:
        frames = _split_frame(_read_csv(path), split_seed)

    columns = [c.name for c in schema.columns]
    for split, frame in frames.items():
        absent = [c for c in columns if c not in frame.columns]
        if absent:
            raise SchemaError(f"{split} split is missing columns {absent}")
        if frame.empty:
            raise SchemaError(f"{split} split is empty")

    total = sum(len(f) for f in frames.values())
    if schema.expected_rows is not None and total != schema.expected_rows:
        raise SchemaError(f"schema {schema.name!r} expects {schema.expected_rows} rows, found {total}")

    train = frames["train"]
    vocabularies = {c: sorted(train[c].fillna("").astype(str).unique()) for c in schema.categorical}
    classes = None
    if schema.task != "regression":
        classes = sorted(train[schema.target].astype(str).unique())
    schema = schema.model_copy(update={"vocabularies": vocabularies, "classes": classes})

    splits = {}
    for split, frame in frames.items():
        x_num = np.column_stack([_numerical(frame, c, split) for c in schema.numerical]) if schema.numerical else np.zeros((len(frame), 0))
        x_cat = (
            np.column_stack([_codes(frame[c], vocabularies[c]) for c in schema.categorical])
            if schema.categorical
            else np.zeros((len(frame), 0), dtype=np.int64)
        )
        if classes is None:
            y = _numerical(frame, schema.target, split)
        else:
            labels = frame[schema.target].astype(str)
            unseen = sorted(set(labels) - set(classes))
            if unseen:
                raise SchemaError(f"{split} split has target classes not seen in train: {unseen[:5]}")
            y = _codes(labels, classes)
        splits[split] = SplitData(x_num, x_cat, y)

    dataset = TabularDataset(schema, splits, path)
    logger.debug("Loaded %s: %s", schema.name, dataset.split_sizes)
    return dataset


# === Preprocessing ===


def fit_transform(
    dataset: TabularDataset,
    numerical_transform: str = "standard",
    seed: int = 0,
) -> tuple[PreparedDataset, PreprocessState]:
    """Fit preprocessing on train and apply it to every split."""
    train = dataset.splits["train"]
    state = PreprocessState(mode=numerical_transform)
    if train.x_num.shape[1]:
        if numerical_transform == "quantile":
            state.quantile = QuantileTransformer(
                output_distribution="normal",
                n_quantiles=max(min(1000, len(train) // 30), 10),
                subsample=10**9,
                random_state=seed,
            ).fit(train.x_num)
        elif numerical_transform == "standard":
            scaler = StandardScaler().fit(train.x_num)
            constant = train.x_num.std(axis=0) == 0
            for i in np.flatnonzero(constant):
                name = dataset.schema.numerical[i]
                logger.warning("Column %r has zero variance on train; passing it through unscaled", name)
                state.clamped.append(name)
            scaler.mean_[constant] = 0.0
            scaler.scale_[constant] = 1.0
            state.scaler = scaler
        else:
            raise ValueError(f"unknown numerical transform {numerical_transform!r}")

    if dataset.schema.task == "regression":
        scaler = StandardScaler().fit(train.y.reshape(-1, 1))
        if scaler.var_[0] == 0:
            logger.warning("Regression target has zero variance on train")
        state.target_scaler = scaler

    splits = {
        name: SplitData(state.transform_numerical(split.x_num), split.x_cat, state.transform_target(split.y))
        for name, split in dataset.splits.items()
    }
    raw = {name: split.y for name, split in dataset.splits.items()}
    return PreparedDataset(dataset.schema, splits, raw, state), state
