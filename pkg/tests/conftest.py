"""Shared fixtures: tiny schemas, float64 runs and finite differences."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from t2g_toolkit.core import autodiff as ad
from t2g_toolkit.core.autodiff import Parameter, Value
from t2g_toolkit.core.models import ColumnSpec, FeatureSchema, ModelConfig


@pytest.fixture
def float64():
    with ad.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_schema(n_num: int = 3, cards: tuple[int, ...] = (3,), task: str = "regression", classes=None) -> FeatureSchema:
    columns = [ColumnSpec(name=f"num{i}", role="numerical") for i in range(n_num)]
    columns += [ColumnSpec(name=f"cat{i}", role="categorical") for i in range(len(cards))]
    columns.append(ColumnSpec(name="target", role="target"))
    vocabularies = {f"cat{i}": [f"v{k}" for k in range(card)] for i, card in enumerate(cards)}
    if task != "regression" and classes is None:
        classes = ["0", "1"]
    return FeatureSchema(name="tiny", task=task, columns=columns, vocabularies=vocabularies, classes=classes)


@pytest.fixture
def schema() -> FeatureSchema:
    return make_schema()


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(n_layers=2, d_token=16, n_heads=4, attention_dropout=0.0, ffn_dropout=0.0, residual_dropout=0.0)
    return ModelConfig(**{**base, **overrides})


def random_inputs(schema: FeatureSchema, rows: int, rng: np.random.Generator):
    x_num = rng.standard_normal((rows, len(schema.numerical)))
    x_cat = np.column_stack([rng.integers(0, card + 1, rows) for card in schema.cardinalities]) if schema.categorical else np.zeros((rows, 0), dtype=np.int64)
    return x_num, x_cat


def numeric_gradient(objective, array: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar objective, perturbing `array` in place."""
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + eps
        plus = objective()
        array[index] = original - eps
        minus = objective()
        array[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def check_op_gradients(build, *arrays, seed: int = 0, tolerance: float = 1e-4) -> None:
    """Compare reverse-mode and finite-difference gradients of sum(build(...) * P)."""
    rng = np.random.default_rng(seed)
    with ad.precision("float64"):
        params = [Parameter(a) for a in arrays]
        projection = Value(rng.standard_normal(build(*params).shape))

        def objective() -> float:
            return float(np.sum(build(*params).data * projection.data))

        ad.backward(ad.sum(ad.mul(build(*params), projection)))
        for i, p in enumerate(params):
            numeric = numeric_gradient(objective, p.data)
            error = relative_error(numeric, p.grad)
            assert error < tolerance, f"input {i}: relative error {error:.2e}"


def check_model_gradients(objective, parameters, entries: int = 6, seed: int = 0, tolerance: float = 1e-4) -> None:
    """Finite differences on sampled entries, with gates and ReLU masks replayed."""
    rng = np.random.default_rng(seed)
    tape = ad.GateTape()
    with ad.gate_tape(tape):
        objective()
        tape.replay()
        for p in parameters:
            p.zero_grad()
        ad.backward(objective())
        grads = [p.grad.copy() for p in parameters]
        for p, grad in zip(parameters, grads):
            picks = rng.choice(p.data.size, size=min(entries, p.data.size), replace=False)
            numeric = []
            for flat in picks:
                original = p.data.flat[flat]
                p.data.flat[flat] = original + 1e-5
                tape.replay()
                plus = objective().item()
                p.data.flat[flat] = original - 1e-5
                tape.replay()
                minus = objective().item()
                p.data.flat[flat] = original
                numeric.append((plus - minus) / 2e-5)
            numeric = np.array(numeric)
            analytic = grad.flat[picks]
            scale = max(np.linalg.norm(numeric) + np.linalg.norm(analytic), 1e-6)
            error = float(np.linalg.norm(numeric - analytic) / scale)
            assert error < tolerance, f"{p.name or p.shape}: relative error {error:.2e}"


def write_split_dir(directory: Path, frames: dict[str, pd.DataFrame]) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for split, frame in frames.items():
        frame.to_csv(directory / f"{split}.csv", index=False)
    return directory


def synthetic_frame(rows: int, rng: np.random.Generator, task: str = "regression") -> pd.DataFrame:
    """Three numerical columns and one categorical with a learnable target."""
    x = rng.standard_normal((rows, 3))
    color = rng.choice(["red", "green", "blue"], size=rows)
    signal = x[:, 0] * x[:, 1] + 0.5 * x[:, 2] + (color == "red")
    frame = pd.DataFrame({"num0": x[:, 0], "num1": x[:, 1], "num2": x[:, 2], "cat0": color})
    frame["target"] = signal if task == "regression" else (signal > np.median(signal)).astype(int)
    return frame
