"""T2G-Former: tokenizer, graph-guided blocks, readout chain and head."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import Parameter, Value
from ..core.errors import CheckpointError, ConfigError
from ..core.models import FeatureSchema, GraphRecord, HeadGraph, ModelConfig, ReadoutRecord
from .block import LayerArtifacts, T2GBlock
from .module import Module
from .readout import CrossLevelReadout, PredictionHead, ReadoutArtifacts
from .tokenizer import FeatureTokenizer

logger = logging.getLogger(__name__)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for initialization, shuffling and dropout."""
    init, shuffle, dropout = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init),
        "shuffle": np.random.default_rng(shuffle),
        "dropout": np.random.default_rng(dropout),
    }


@dataclass
class ForwardOutput:
    predictions: Value  # (B,) for regression, (B, C) logits otherwise
    layers: list[LayerArtifacts]
    readouts: list[ReadoutArtifacts]


class T2GFormer(Module):
    """The full model for one dataset schema.

    Example:
        model = T2GFormer(schema, ModelConfig(n_layers=2, d_token=64), rng=0)
        out = model.forward(x_num, x_cat)
        out.predictions.data
    """

    def __init__(self, schema: FeatureSchema, config: ModelConfig | None = None, rng: np.random.Generator | int = 0):
        config = config or ModelConfig()
        if config.task is not None and config.task != schema.task:
            raise ConfigError(f"model task {config.task!r} does not match schema task {schema.task!r}")
        if schema.n_features == 0:
            raise ConfigError(f"schema {schema.name!r} has no feature columns")
        if schema.task != "regression" and schema.n_outputs < 2:
            raise ConfigError(f"schema {schema.name!r} needs at least 2 classes, got {schema.classes}")
        missing = [name for name in schema.categorical if not schema.vocabularies.get(name)]
        if missing:
            raise ConfigError(f"no vocabulary for categorical columns {missing}; load the schema through load_dataset")
        if isinstance(rng, (int, np.integer)):
            rng = seed_streams(int(rng))["init"]

        self.schema = schema
        self.config = config.model_copy(update={"task": schema.task})
        n_features = schema.n_features
        d_col = config.resolve_d_col(n_features)
        self._d_col = d_col

        self.tokenizer = FeatureTokenizer(len(schema.numerical), schema.cardinalities, config.d_token, rng)
        self.blocks = [
            T2GBlock(n_features, config, d_col, rng, use_estimator=use)
            for use in config.ge_layers
        ]
        self.readout = CrossLevelReadout(n_features, config, d_col, self.blocks, rng)
        self.head = PredictionHead(config.d_token, schema.n_outputs, rng)
        self.topology_frozen = False

        for name, p in self.named_parameters():
            p.name = name

    @property
    def d_col(self) -> int:
        return self._d_col

    @property
    def n_features(self) -> int:
        return self.schema.n_features

    def forward(
        self,
        x_num: np.ndarray | None,
        x_cat: np.ndarray | None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardOutput:
        x = self.tokenizer(x_num, x_cat)
        z = self.readout.initial_state(x.shape[0])
        layers, readouts = [], []
        for index, block in enumerate(self.blocks):
            x, artifacts = block.forward(x, training, rng)
            z, selection = self.readout.collect(z, artifacts, block, index, training, rng)
            layers.append(artifacts)
            readouts.append(selection)
        predictions = self.head(z)
        if self.schema.task == "regression":
            predictions = ad.reshape(predictions, (predictions.shape[0],))
        return ForwardOutput(predictions, layers, readouts)

    __call__ = forward

    # === Parameters ===

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def parameter_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {"backbone": [], "column_embedding": []}
        for name, p in self.named_parameters():
            groups[p.group].append(name)
        return groups

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise CheckpointError(f"parameter names differ: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in params.items():
            array = np.asarray(state[name])
            if array.shape != p.shape:
                raise CheckpointError(f"parameter {name!r} has shape {array.shape}, model expects {p.shape}")
            p.data = array.astype(p.data.dtype, copy=True)
        if self.topology_frozen:
            self._refresh_frozen()

    # === Topology freezing ===

    def freeze_topology(self) -> None:
        """Fix A and the readout gates; their parameters stop training."""
        if self.topology_frozen:
            return
        for block in self.blocks:
            block.estimator.freeze()
        self.readout.freeze(self.blocks)
        self.topology_frozen = True
        logger.debug("Topology frozen for %d layers", len(self.blocks))

    def _refresh_frozen(self) -> None:
        for block in self.blocks:
            block.estimator.refresh_frozen()
        self.readout.refresh_frozen(self.blocks)

    def topology_parameters(self) -> list[Parameter]:
        params = [p for block in self.blocks for p in block.estimator.topology_parameters()]
        return params + [p for p in self.readout.semantics if p is not None]

    # === Interpretability ===

    def export_graphs(
        self, x_num: np.ndarray | None, x_cat: np.ndarray | None
    ) -> tuple[list[GraphRecord], list[ReadoutRecord]]:
        """Per-layer FR-Graphs and readout selections on a reference batch.

        Edge weights are G averaged over the batch; a head's adjacency is
        every edge the layer permitted for at least one sample.
        """
        out = self.forward(x_num, x_cat, training=False)
        names = self.schema.feature_names
        graphs, selections = [], []
        for index, (layer, readout) in enumerate(zip(out.layers, out.readouts)):
            block = self.blocks[index]
            g = layer.graph.data.astype(np.float64)
            allowed = np.broadcast_to(layer.fr_graph.allowed, g.shape)
            head_adjacency = allowed.any(axis=0)
            head_weights = g.mean(axis=0)
            heads = [
                HeadGraph(head=h, adjacency=head_adjacency[h].astype(int).tolist(), weights=head_weights[h].tolist())
                for h in range(g.shape[1])
            ]
            graphs.append(
                GraphRecord(
                    layer=index,
                    feature_names=names,
                    labels=[self.schema.abbreviation(name) for name in names],
                    adjacency=head_adjacency.any(axis=0).astype(int).tolist(),
                    weights=head_weights.mean(axis=0).tolist(),
                    heads=heads,
                    frozen=self.topology_frozen,
                    topology_mode=block.estimator.topology_mode,
                    uses_estimator=block.uses_estimator,
                )
            )
            w = readout.weights.data.astype(np.float64)
            selected = np.broadcast_to(readout.selected, w.shape)
            head_selected = selected.any(axis=0)[:, 0, :]
            selections.append(
                ReadoutRecord(
                    layer=index,
                    feature_names=names,
                    selected=head_selected.any(axis=0).astype(int).tolist(),
                    weights=w.mean(axis=(0, 1))[0].tolist(),
                    head_selected=head_selected.astype(int).tolist(),
                )
            )
        return graphs, selections
