"""Graph estimator: builds the per-layer, per-head feature relation graph.

Three pieces make up an FR-Graph:

* adaptive edge weights G_w, a bilinear score between head and tail
  projections of the tokens (sample dependent);
* a hard topology A, thresholded sigmoid of a topology score, made
  trainable with a straight-through gate;
* the assembled graph G, a row softmax of A ⊙ G_w restricted to the edges
  A permits (and, by default, without self-loops).

Excluded edges get an additive MASK_VALUE before the softmax, so they carry
exactly zero probability. A row with no permitted edge is all zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import MASK_VALUE, Parameter, Value
from ..core.models import Symmetry, TopologyMode
from .module import Linear, Module, uniform


@dataclass
class FRGraph:
    """One layer's graph for a batch, all heads stacked on axis 1."""
    edge_weights: Value  # (B, H, N, N)
    adjacency: Value  # (H, N, N), or (B, H, N, N) when sample dependent
    graph: Value  # (B, H, N, N), rows sum to 1 or are all zero
    tail: Value  # (B, H, N, m) tail encodings f^t, reused by the readout
    allowed: np.ndarray  # bool, edges that survived masking


def symmetrize(x: Value) -> Value:
    """(x + xᵀ) / 2, bit-exactly symmetric."""
    return ad.scale(ad.add(x, ad.transpose(x)), 0.5)


def edge_weight_scores(head: Value, tail: Value, relation: Value | None, symmetric: bool = False) -> Value:
    """G_w[i, j] = (f_i^h ⊙ r) · f_j^t / √m over the last two axes."""
    m = head.shape[-1]
    left = ad.mul(head, relation) if relation is not None else head
    scores = ad.scale(ad.matmul(left, ad.transpose(tail)), 1.0 / math.sqrt(m))
    return symmetrize(scores) if symmetric else scores


def topology_scores(col_head: Value, col_tail: Value) -> Value:
    """Cosine similarity between head-view and tail-view column embeddings."""
    e_head = ad.l2_normalize(col_head)
    if col_tail is col_head:
        return symmetrize(ad.matmul(e_head, ad.transpose(e_head)))
    return ad.matmul(e_head, ad.transpose(ad.l2_normalize(col_tail)))


def hard_topology(
    scores: Value | None,
    bias: Value | None,
    threshold: float,
    mode: TopologyMode,
    n_features: int,
) -> Value:
    """A = 1[sigmoid(scores + b) > T] with a straight-through gradient."""
    if mode == "all_ones":
        return Value(np.ones((n_features, n_features)))
    return ad.straight_through_gate(ad.sigmoid(ad.add(scores, bias)), threshold)


def allowed_edges(adjacency: Value, no_self_interaction: bool) -> np.ndarray:
    allowed = adjacency.data > 0.5
    if no_self_interaction:
        allowed = allowed & ~np.eye(adjacency.shape[-1], dtype=bool)
    return allowed


def assemble(edge_weights: Value, adjacency: Value, no_self_interaction: bool = True) -> Value:
    """G = row_softmax(A ⊙ G_w) over permitted edges only."""
    allowed = allowed_edges(adjacency, no_self_interaction)
    mask = np.where(allowed, 0.0, MASK_VALUE)
    return ad.row_softmax(ad.mul(edge_weights, adjacency), mask)


def split_heads(x: Value, n_heads: int) -> Value:
    """(B, N, n) → (B, H, N, m)."""
    batch, tokens, width = x.shape
    x = ad.reshape(x, (batch, tokens, n_heads, width // n_heads))
    return ad.permute(x, (0, 2, 1, 3))


def merge_heads(x: Value) -> Value:
    """(B, H, N, m) → (B, N, H·m)."""
    batch, heads, tokens, m = x.shape
    return ad.reshape(ad.permute(x, (0, 2, 1, 3)), (batch, tokens, heads * m))


class GraphEstimator(Module):
    """Per-layer estimator with every head packed into one projection.

    With `plain=True` the estimator degrades to scaled dot-product attention:
    independent query/key projections, no relation vector, no topology.
    """

    def __init__(
        self,
        n_features: int,
        d_token: int,
        n_heads: int,
        rng: np.random.Generator,
        *,
        weight_symmetry: Symmetry = "S",
        topology_symmetry: Symmetry = "A",
        topology_mode: TopologyMode = "knowledge",
        self_loops: bool = False,
        d_col: int = 2,
        threshold: float = 0.5,
        plain: bool = False,
    ):
        self.n_features = n_features
        self.n_heads = n_heads
        self.threshold = threshold
        self.plain = plain
        self.topology_mode: TopologyMode = "all_ones" if plain else topology_mode
        self.self_loops = True if plain else self_loops
        head_dim = d_token // n_heads

        self.head_proj = Linear(d_token, d_token, rng)
        shared = weight_symmetry == "S" and not plain
        self.tail_proj = self.head_proj if shared else Linear(d_token, d_token, rng)
        self.relation = None if plain else Parameter(np.ones((n_heads, 1, head_dim)))

        self.col_head = self.col_tail = self.free_scores = self.bias = None
        if self.topology_mode == "knowledge":
            bound = 1.0 / math.sqrt(d_col)
            self.col_head = Parameter(uniform(rng, bound, (n_heads, n_features, d_col)), group="column_embedding")
            self.col_tail = (
                self.col_head
                if topology_symmetry == "S"
                else Parameter(uniform(rng, bound, (n_heads, n_features, d_col)), group="column_embedding")
            )
        elif self.topology_mode == "free":
            self.free_scores = Parameter(uniform(rng, 1.0, (n_heads, n_features, n_features)), group="column_embedding")
        self._symmetric_free = topology_symmetry == "S"
        if self.topology_mode != "all_ones":
            self.bias = Parameter(np.zeros((n_heads, 1, 1)))
        self._frozen_adjacency: Value | None = None
        self.frozen = False

    @property
    def symmetric_weights(self) -> bool:
        return self.tail_proj is self.head_proj

    def topology_parameters(self) -> list[Parameter]:
        return [p for p in (self.col_head, self.col_tail, self.free_scores, self.bias) if p is not None]

    def encode(self, x: Value) -> tuple[Value, Value]:
        """Head and tail encodings, each (B, H, N, m)."""
        head = split_heads(self.head_proj(x), self.n_heads)
        tail = head if self.symmetric_weights else split_heads(self.tail_proj(x), self.n_heads)
        return head, tail

    def edge_weight_scores(self, x: Value) -> Value:
        head, tail = self.encode(x)
        return edge_weight_scores(head, tail, self.relation, self.symmetric_weights)

    def topology_scores(self) -> Value:
        if self.topology_mode != "knowledge":
            raise ValueError(f"topology scores need knowledge mode, estimator is {self.topology_mode!r}")
        return topology_scores(self.col_head, self.col_tail)

    def adjacency(self, edge_weights: Value | None = None) -> Value:
        """Hard topology for the current parameters (cached once frozen)."""
        if self._frozen_adjacency is not None:
            return self._frozen_adjacency
        mode = self.topology_mode
        if mode == "knowledge":
            scores = self.topology_scores()
        elif mode == "free":
            scores = symmetrize(self.free_scores) if self._symmetric_free else self.free_scores
        elif mode == "adaptive":
            if edge_weights is None:
                raise ValueError("adaptive topology needs per-sample edge weights")
            scores = edge_weights
        else:
            scores = None
        return hard_topology(scores, self.bias, self.threshold, mode, self.n_features)

    def __call__(self, x: Value) -> FRGraph:
        head, tail = self.encode(x)
        g_w = edge_weight_scores(head, tail, self.relation, self.symmetric_weights)
        if self.plain:
            adjacency = Value(np.ones((self.n_features, self.n_features)))
            allowed = np.ones((self.n_features, self.n_features), dtype=bool)
            return FRGraph(g_w, adjacency, ad.row_softmax(g_w), tail, allowed)
        adjacency = self.adjacency(g_w)
        no_self = not self.self_loops
        graph = assemble(g_w, adjacency, no_self)
        return FRGraph(g_w, adjacency, graph, tail, allowed_edges(adjacency, no_self))

    def freeze(self) -> None:
        """Stop training the topology; knowledge and free modes also cache A."""
        for p in self.topology_parameters():
            p.trainable = False
        self.frozen = True
        self.refresh_frozen()

    def refresh_frozen(self) -> None:
        if not self.frozen or self.topology_mode not in ("knowledge", "free"):
            return
        self._frozen_adjacency = None
        self._frozen_adjacency = Value(self.adjacency().data.copy())
