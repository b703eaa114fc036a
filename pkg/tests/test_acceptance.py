"""End-to-end checks that train real models; run with `pytest -m slow`."""

import numpy as np
import pytest

from t2g_former.services.runs import RunService
from t2g_toolkit.config import DATA_DIR
from t2g_toolkit.core.models import DataConfig, ModelConfig, RunConfig, TrainConfig
from t2g_toolkit.data import fit_transform, make_interaction_dataset, pairwise_interaction_ranking
from t2g_toolkit.data.synthetic import INTERACTING_PAIRS
from t2g_toolkit.nn.model import T2GFormer
from t2g_toolkit.training.trainer import train

pytestmark = pytest.mark.slow

needs_data = pytest.mark.skipif(DATA_DIR is None, reason="T2G_DATA_DIR is not set")


def _has_edge(adjacency: np.ndarray, i: int, j: int) -> bool:
    return bool(adjacency[i, j] or adjacency[j, i])


def test_interacting_features_are_connected():
    dataset = make_interaction_dataset(seed=0)
    train_split = dataset.splits["train"]
    top = [pair for pair, _ in pairwise_interaction_ranking(train_split.x_num, train_split.y)[:2]]
    assert set(top) == set(INTERACTING_PAIRS)

    prepared, _ = fit_transform(dataset)
    model_config = ModelConfig(n_layers=2, d_token=32, n_heads=4, ffn_dropout=0.0, attention_dropout=0.0)
    train_config = TrainConfig(max_epochs=40, batch_size=256, lr_backbone=1e-3, early_stop_patience=8)
    val = prepared.splits["val"]

    recovered = 0
    for seed in range(5):
        model = T2GFormer(prepared.schema, model_config, rng=seed)
        train(model, prepared, train_config.model_copy(update={"seed": seed}))
        graphs, _ = model.export_graphs(val.x_num, val.x_cat)
        adjacency = np.asarray(graphs[0].adjacency)
        recovered += all(_has_edge(adjacency, i, j) for i, j in INTERACTING_PAIRS)
    assert recovered >= 4


def _benchmark_path(key: str):
    directory = DATA_DIR / key
    return directory if directory.exists() else DATA_DIR / f"{key}.csv"


@needs_data
def test_california_housing_rmse(tmp_path):
    config = RunConfig(data=DataConfig(path=_benchmark_path("ca"), dataset="ca"), output_dir=tmp_path)
    summary = RunService(tmp_path).train(config)
    assert summary.test_mean <= 0.52


@needs_data
def test_churn_accuracy(tmp_path):
    config = RunConfig(data=DataConfig(path=_benchmark_path("ch"), dataset="ch"), output_dir=tmp_path)
    summary = RunService(tmp_path).train(config)
    assert summary.test_mean >= 0.85
