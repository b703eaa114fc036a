"""Pydantic models for configuration, schemas and exported records."""

import hashlib
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, model_validator

from ..config import DEFAULT_PRECISION, GATE_THRESHOLD

TaskType = Literal["binclass", "multiclass", "regression"]
ColumnRole = Literal["numerical", "categorical", "target"]
TopologyMode = Literal["knowledge", "adaptive", "free", "all_ones"]
Symmetry = Literal["S", "A"]
FRGraphType = Literal["SwAt", "SwSt", "AwAt", "AwSt"]
SplitName = Literal["train", "val", "test"]


class ColumnSpec(BaseModel):
    """One column of a tabular dataset."""
    name: str
    role: ColumnRole
    abbreviation: str | None = None
    description: str | None = None


class FeatureSchema(BaseModel):
    """Column roles and task of a dataset.

    Feature order is numerical columns first, then categorical ones, each in
    file order; token i of the model corresponds to feature_names[i].
    """
    name: str
    task: TaskType
    columns: list[ColumnSpec]
    expected_rows: int | None = None
    # Filled at load time from the train split
    vocabularies: dict[str, list[str]] = Field(default_factory=dict)
    classes: list[str] | None = None

    @model_validator(mode="after")
    def _one_target(self):
        targets = [c.name for c in self.columns if c.role == "target"]
        if len(targets) != 1:
            raise ValueError(f"schema {self.name!r} needs exactly one target column, got {targets}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"schema {self.name!r} has duplicate column names")
        return self

    @property
    def numerical(self) -> list[str]:
        return [c.name for c in self.columns if c.role == "numerical"]

    @property
    def categorical(self) -> list[str]:
        return [c.name for c in self.columns if c.role == "categorical"]

    @property
    def target(self) -> str:
        return next(c.name for c in self.columns if c.role == "target")

    @property
    def feature_names(self) -> list[str]:
        return self.numerical + self.categorical

    @property
    def n_features(self) -> int:
        return len(self.numerical) + len(self.categorical)

    @property
    def cardinalities(self) -> list[int]:
        return [len(self.vocabularies.get(name, [])) for name in self.categorical]

    @property
    def n_outputs(self) -> int:
        if self.task == "regression":
            return 1
        return len(self.classes or [])

    @property
    def metric(self) -> Literal["rmse", "accuracy"]:
        return "rmse" if self.task == "regression" else "accuracy"

    def abbreviation(self, name: str) -> str:
        spec = next((c for c in self.columns if c.name == name), None)
        return (spec.abbreviation if spec and spec.abbreviation else name)

    def fingerprint(self) -> str:
        """Hash of everything a trained model depends on."""
        payload = self.model_dump_json(include={"task", "columns", "vocabularies", "classes"})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def column_embedding_dim(n_features: int) -> int:
    """d = 2·⌈log₂ N⌉, the bits needed to index an N×N binary adjacency."""
    return max(1, 2 * math.ceil(math.log2(max(n_features, 1))))


class ModelConfig(BaseModel):
    """Architecture and ablation switches.

    Defaults give symmetric edge weights, asymmetric topology, no self-loops,
    knowledge topology and a graph estimator in every layer.
    """
    n_layers: int = Field(3, ge=1)
    d_token: int = Field(192, ge=1)
    n_heads: int = Field(8, ge=1)
    weight_symmetry: Symmetry = "S"
    topology_symmetry: Symmetry = "A"
    self_loops: bool = False
    topology_mode: TopologyMode = "knowledge"
    per_layer_ge: list[bool] | None = None
    attention_dropout: float = Field(0.2, ge=0.0, lt=1.0)
    ffn_dropout: float = Field(0.1, ge=0.0, lt=1.0)
    residual_dropout: float = Field(0.0, ge=0.0, lt=1.0)
    d_col: int | None = Field(None, ge=1)
    threshold: float = GATE_THRESHOLD
    ffn_factor: float = Field(4 / 3, gt=0.0)
    task: TaskType | None = None

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.d_token % self.n_heads:
            raise ValueError(f"d_token={self.d_token} is not divisible by n_heads={self.n_heads}")
        if self.per_layer_ge is not None and len(self.per_layer_ge) != self.n_layers:
            raise ValueError(
                f"per_layer_ge has {len(self.per_layer_ge)} entries for {self.n_layers} layers"
            )
        return self

    @property
    def head_dim(self) -> int:
        return self.d_token // self.n_heads

    @property
    def ge_layers(self) -> list[bool]:
        return list(self.per_layer_ge) if self.per_layer_ge is not None else [True] * self.n_layers

    @property
    def fr_graph(self) -> str:
        return f"{self.weight_symmetry}w{self.topology_symmetry}t"

    def with_fr_graph(self, kind: FRGraphType) -> "ModelConfig":
        """Copy with symmetry flags taken from a name like 'SwAt'."""
        return self.model_copy(update={"weight_symmetry": kind[0], "topology_symmetry": kind[2]})

    def resolve_d_col(self, n_features: int) -> int:
        return self.d_col or column_embedding_dim(n_features)


class TrainConfig(BaseModel):
    """Optimization, evaluation cadence and topology-freeze schedule."""
    lr_backbone: float = Field(1e-4, gt=0.0)
    lr_column_embedding: float = Field(5e-3, gt=0.0)
    weight_decay: float = Field(1e-5, ge=0.0)
    batch_size: int | None = Field(None, ge=1)
    max_epochs: int = Field(100, ge=1)
    eval_every: int = Field(1, ge=1)
    early_stop_patience: int = Field(16, ge=1)
    freeze_patience: int = Field(5, ge=1)
    freeze_epoch: int | None = Field(None, ge=1)
    seed: int = 0
    precision: Literal["float32", "float64"] = DEFAULT_PRECISION


class DataConfig(BaseModel):
    """Where the data lives and how numerical features are transformed."""
    path: Path
    schema_file: Path | None = None
    dataset: str | None = None
    numerical_transform: Literal["standard", "quantile"] = "standard"
    split_seed: int = 0


class SweepConfig(BaseModel):
    """Ablation axes; each non-empty list adds one variant per entry."""
    fr_graph: list[FRGraphType] = Field(default_factory=list)
    self_loops: list[bool] = Field(default_factory=list)
    per_layer_ge: list[list[bool]] = Field(default_factory=list)
    topology_mode: list[TopologyMode] = Field(default_factory=list)
    max_epochs: int | None = Field(None, ge=1)


class RunConfig(BaseModel):
    """Everything needed to reproduce a run from its artifacts."""
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig
    output_dir: Path | None = None
    seeds: list[int] = Field(default_factory=lambda: [0])
    sweep: SweepConfig | None = None


class MetricRecord(BaseModel):
    """One line of the metric history."""
    epoch: int
    split: SplitName
    metric: float
    loss: float | None = None
    train_loss: float | None = None
    frozen: bool = False


class HeadGraph(BaseModel):
    """FR-Graph of one attention head."""
    head: int
    adjacency: list[list[int]]
    weights: list[list[float]]


class GraphRecord(BaseModel):
    """Layer FR-Graph: OR of head adjacencies, mean edge weights."""
    layer: int
    feature_names: list[str]
    labels: list[str] | None = None  # short display names, parallel to feature_names
    adjacency: list[list[int]]
    weights: list[list[float]]
    heads: list[HeadGraph]
    frozen: bool = False
    topology_mode: TopologyMode = "knowledge"
    uses_estimator: bool = True


class ReadoutRecord(BaseModel):
    """Which features the readout node collects at one layer."""
    layer: int
    feature_names: list[str]
    selected: list[int]
    weights: list[float]
    head_selected: list[list[int]]


class SeedResult(BaseModel):
    """Outcome of training on one seed."""
    seed: int
    best_epoch: int
    val_metric: float
    test_metric: float
    frozen_at_epoch: int | None = None
    stopped_early: bool = False
    n_parameters: int


class RunSummary(BaseModel):
    """Aggregate over a seed list."""
    dataset: str
    metric: Literal["rmse", "accuracy"]
    fr_graph: str
    seeds: list[SeedResult]
    test_mean: float
    test_std: float
    val_mean: float
    val_std: float
