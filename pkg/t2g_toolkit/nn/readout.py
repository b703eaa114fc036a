"""Cross-level readout node and prediction head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import MASK_VALUE, Parameter, Value
from ..core.models import ModelConfig
from .block import LayerArtifacts, T2GBlock
from .graph_estimator import edge_weight_scores
from .module import LayerNorm, Linear, Module, uniform


@dataclass
class ReadoutArtifacts:
    weights: Value  # (B, H, 1, N) softmax weights over features
    gate: Value | None  # (H, 1, N) or (B, H, 1, N); None selects everything
    selected: np.ndarray  # bool, broadcastable to weights


class CrossLevelReadout(Module):
    """A global node that collects selected features after every layer.

    The node reuses the layer's head projection, tail encodings, values,
    topology bias and feed-forward; it only owns its initial status z⁰ and
    one semantics vector per layer. It never writes back into the tokens.
    """

    def __init__(self, n_features: int, config: ModelConfig, d_col: int, blocks: list[T2GBlock], rng: np.random.Generator):
        n = config.d_token
        self.n_heads = config.n_heads
        self.threshold = config.threshold
        self.initial = Parameter(uniform(rng, 1.0 / math.sqrt(n), (n,)))
        self.semantics: list[Parameter | None] = []
        for block in blocks:
            mode = block.estimator.topology_mode
            if mode == "knowledge":
                p = Parameter(uniform(rng, 1.0 / math.sqrt(d_col), (config.n_heads, 1, d_col)), group="column_embedding")
            elif mode == "free":
                p = Parameter(uniform(rng, 1.0, (config.n_heads, 1, n_features)), group="column_embedding")
            else:
                p = None
            self.semantics.append(p)
        self._frozen_gates: dict[int, Value] = {}

    def initial_state(self, batch_size: int) -> Value:
        return ad.add(Value(np.zeros((batch_size, self.initial.shape[0]))), self.initial)

    def gate(self, layer: int, block: T2GBlock, alpha_raw: Value) -> Value | None:
        """Binary feature selection for one layer, straight-through."""
        if layer in self._frozen_gates:
            return self._frozen_gates[layer]
        est = block.estimator
        mode = est.topology_mode
        if mode == "all_ones":
            return None
        if mode == "knowledge":
            e_tail = ad.l2_normalize(est.col_tail)
            scores = ad.matmul(ad.l2_normalize(self.semantics[layer]), ad.transpose(e_tail))
        elif mode == "free":
            scores = self.semantics[layer]
        else:
            scores = alpha_raw
        return ad.straight_through_gate(ad.sigmoid(ad.add(scores, est.bias)), est.threshold)

    def collect(
        self,
        z: Value,
        artifacts: LayerArtifacts,
        block: T2GBlock,
        layer: int,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Value, ReadoutArtifacts]:
        """z_next = FFN(r) + r with r = softmax(α)ᵀ V + z."""
        est = block.estimator
        batch, n = z.shape
        head_dim = n // self.n_heads
        query = ad.reshape(est.head_proj(block.attention_norm(z)), (batch, self.n_heads, 1, head_dim))
        alpha_raw = edge_weight_scores(query, artifacts.fr_graph.tail, est.relation)
        gate = self.gate(layer, block, alpha_raw)
        if gate is None:
            weights = ad.row_softmax(alpha_raw)
            selected = np.ones((1, 1, 1, alpha_raw.shape[-1]), dtype=bool)
        else:
            selected = gate.data > 0.5
            weights = ad.row_softmax(ad.mul(alpha_raw, gate), np.where(selected, 0.0, MASK_VALUE))
        message = ad.reshape(ad.matmul(weights, artifacts.values), (batch, n))
        r = ad.add(message, z)
        z_next = ad.add(block.transform(r, training, rng), r)
        return z_next, ReadoutArtifacts(weights, gate, selected)

    def freeze(self, blocks: list[T2GBlock]) -> None:
        for p in self.semantics:
            if p is not None:
                p.trainable = False
        self.refresh_frozen(blocks)

    def refresh_frozen(self, blocks: list[T2GBlock]) -> None:
        """Cache the sample-independent gates from the current parameters."""
        self._frozen_gates = {}
        for layer, block in enumerate(blocks):
            if block.estimator.topology_mode in ("knowledge", "free"):
                gate = self.gate(layer, block, alpha_raw=None)
                self._frozen_gates[layer] = Value(gate.data.copy())


class PredictionHead(Module):
    """ŷ = Linear(ReLU(LN(z_L)))."""

    def __init__(self, d_token: int, n_outputs: int, rng: np.random.Generator):
        self.norm = LayerNorm(d_token)
        self.linear = Linear(d_token, n_outputs, rng)

    def __call__(self, z: Value) -> Value:
        return self.linear(ad.relu(self.norm(z)))


def predict_head(head: PredictionHead, z: Value) -> Value:
    return head(z)
