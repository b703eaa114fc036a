"""One T2G layer: graph-guided interaction, shortcut, feed-forward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import Value
from ..core.models import ModelConfig
from .graph_estimator import FRGraph, GraphEstimator, merge_heads, split_heads
from .module import FeedForward, LayerNorm, Linear, Module


@dataclass
class LayerArtifacts:
    """What the readout and the graph export need from a layer."""
    fr_graph: FRGraph
    values: Value  # (B, H, N, m)

    @property
    def graph(self) -> Value:
        return self.fr_graph.graph

    @property
    def adjacency(self) -> Value:
        return self.fr_graph.adjacency


class T2GBlock(Module):
    """Pre-norm layer.

        H      = W_out · concat_h(G_h V_h) + g(X)
        X_next = FFN(LN₂(H)) + g(H)

    where G comes from the graph estimator on LN₁(X) and g is the residual
    dropout. The output projection has no bias, so a layer whose topology
    isolates every node passes X through untouched before the FFN.
    """

    def __init__(self, n_features: int, config: ModelConfig, d_col: int, rng: np.random.Generator, use_estimator: bool = True):
        n = config.d_token
        self.n_heads = config.n_heads
        self.attention_norm = LayerNorm(n)
        self.estimator = GraphEstimator(
            n_features,
            n,
            config.n_heads,
            rng,
            weight_symmetry=config.weight_symmetry,
            topology_symmetry=config.topology_symmetry,
            topology_mode=config.topology_mode,
            self_loops=config.self_loops,
            d_col=d_col,
            threshold=config.threshold,
            plain=not use_estimator,
        )
        self.value_proj = Linear(n, n, rng)
        self.out_proj = Linear(n, n, rng, bias=False)
        self.ffn_norm = LayerNorm(n)
        self.ffn = FeedForward(n, config.ffn_factor, config.ffn_dropout, rng)
        self.attention_dropout = config.attention_dropout
        self.residual_dropout = config.residual_dropout

    @property
    def uses_estimator(self) -> bool:
        return not self.estimator.plain

    def __call__(self, x: Value, training: bool = False, rng: np.random.Generator | None = None):
        return self.forward(x, training, rng)

    def forward(
        self, x: Value, training: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[Value, LayerArtifacts]:
        xn = self.attention_norm(x)
        fr_graph = self.estimator(xn)
        values = split_heads(self.value_proj(xn), self.n_heads)
        probs = ad.dropout(fr_graph.graph, self.attention_dropout, training, rng)
        message = self.out_proj(merge_heads(ad.matmul(probs, values)))
        h = ad.add(message, ad.dropout(x, self.residual_dropout, training, rng))
        x_next = ad.add(self.transform(h, training, rng), ad.dropout(h, self.residual_dropout, training, rng))
        return x_next, LayerArtifacts(fr_graph, values)

    def transform(self, h: Value, training: bool = False, rng: np.random.Generator | None = None) -> Value:
        """FFN(LN₂(h)), shared with the readout node."""
        return self.ffn(self.ffn_norm(h), training, rng)


def block_forward(
    block: T2GBlock, x: Value, training: bool = False, rng: np.random.Generator | None = None
) -> tuple[Value, LayerArtifacts]:
    return block.forward(x, training, rng)
