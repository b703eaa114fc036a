"""Synthetic interaction data with a known relation structure."""

from __future__ import annotations

from itertools import combinations

import numpy as np
from sklearn.feature_selection import mutual_info_regression

from ..core.models import ColumnSpec, FeatureSchema
from .io import SplitData, TabularDataset

INTERACTING_PAIRS = ((0, 1), (2, 3))


def interaction_schema(n_features: int = 6) -> FeatureSchema:
    columns = [ColumnSpec(name=f"x{i + 1}", role="numerical") for i in range(n_features)]
    columns.append(ColumnSpec(name="y", role="target"))
    return FeatureSchema(name="synthetic-interactions", task="regression", columns=columns)


def make_interaction_dataset(
    n_train: int = 2000,
    n_val: int = 500,
    n_test: int = 500,
    n_features: int = 6,
    noise: float = 0.05,
    seed: int = 0,
) -> TabularDataset:
    """y = x1·x2 + x3·x4 + noise·ε over standard-normal features."""
    rng = np.random.default_rng(seed)
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    splits = {}
    for name, rows in sizes.items():
        x = rng.standard_normal((rows, n_features))
        y = sum(x[:, i] * x[:, j] for i, j in INTERACTING_PAIRS) + noise * rng.standard_normal(rows)
        splits[name] = SplitData(x, np.zeros((rows, 0), dtype=np.int64), y)
    return TabularDataset(interaction_schema(n_features), splits)


def pairwise_interaction_ranking(x: np.ndarray, y: np.ndarray, seed: int = 0) -> list[tuple[tuple[int, int], float]]:
    """Rank feature pairs by mutual information between x_i·x_j and y."""
    pairs = list(combinations(range(x.shape[1]), 2))
    products = np.column_stack([x[:, i] * x[:, j] for i, j in pairs])
    scores = mutual_info_regression(products, y, random_state=seed)
    return sorted(zip(pairs, scores.tolist()), key=lambda item: -item[1])
