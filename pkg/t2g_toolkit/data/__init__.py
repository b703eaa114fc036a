"""Dataset loading, preprocessing and synthetic data."""

from .io import (
    PreparedDataset,
    PreprocessState,
    SplitData,
    TabularDataset,
    fit_transform,
    load_dataset,
    load_schema,
)
from .synthetic import make_interaction_dataset, pairwise_interaction_ranking

__all__ = [
    "PreparedDataset",
    "PreprocessState",
    "SplitData",
    "TabularDataset",
    "fit_transform",
    "load_dataset",
    "load_schema",
    "make_interaction_dataset",
    "pairwise_interaction_ranking",
]
