"""Network layers built on the autodiff core."""

from .block import LayerArtifacts, T2GBlock, block_forward
from .graph_estimator import FRGraph, GraphEstimator, assemble, edge_weight_scores, hard_topology, topology_scores
from .model import ForwardOutput, T2GFormer, seed_streams
from .readout import CrossLevelReadout, PredictionHead, predict_head
from .tokenizer import FeatureTokenizer

__all__ = [
    "LayerArtifacts",
    "T2GBlock",
    "block_forward",
    "FRGraph",
    "GraphEstimator",
    "assemble",
    "edge_weight_scores",
    "hard_topology",
    "topology_scores",
    "ForwardOutput",
    "T2GFormer",
    "seed_streams",
    "CrossLevelReadout",
    "PredictionHead",
    "predict_head",
    "FeatureTokenizer",
]
