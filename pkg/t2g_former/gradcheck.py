"""Finite-difference check of every parameter gradient on a tiny model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from t2g_toolkit.core import autodiff as ad
from t2g_toolkit.core.errors import ConfigError
from t2g_toolkit.core.models import ColumnSpec, FeatureSchema, ModelConfig
from t2g_toolkit.nn.model import T2GFormer
from t2g_toolkit.training.losses import loss

TOLERANCE = 1e-4
STEP = 1e-5
# Gradients below this norm are compared in absolute terms
NORM_FLOOR = 1e-6


@dataclass
class ParameterCheck:
    name: str
    group: str
    relative_error: float
    entries: int
    analytic_norm: float


@dataclass
class GradcheckReport:
    checks: list[ParameterCheck]
    tolerance: float
    straight_through: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> list[ParameterCheck]:
        return [c for c in self.checks if not c.relative_error < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def group_max(self) -> dict[str, float]:
        groups: dict[str, float] = {}
        for c in self.checks:
            groups[c.group] = max(groups.get(c.group, 0.0), c.relative_error)
        return groups


def tiny_schema() -> FeatureSchema:
    """Four numerical features and one three-way categorical: N = 5."""
    columns = [ColumnSpec(name=f"x{i}", role="numerical") for i in range(4)]
    columns += [ColumnSpec(name="c", role="categorical"), ColumnSpec(name="y", role="target")]
    return FeatureSchema(name="gradcheck", task="regression", columns=columns, vocabularies={"c": ["a", "b", "c"]})


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        n_layers=2,
        d_token=16,
        n_heads=4,
        attention_dropout=0.0,
        ffn_dropout=0.0,
        residual_dropout=0.0,
    )
    return ModelConfig(**{**base, **overrides})


def run_gradcheck(
    config: ModelConfig | None = None,
    seed: int = 0,
    batch_size: int = 8,
    entries_per_parameter: int = 12,
    step: float = STEP,
    tolerance: float = TOLERANCE,
) -> GradcheckReport:
    """Compare reverse-mode gradients with central differences in float64.

    Gate decisions are recorded on a first pass and replayed as first-order
    surrogates, so the straight-through paths are checked against the
    derivative of their sigmoid inputs.
    """
    config = config or tiny_config()
    if config.n_layers > 2 or config.d_token > 32:
        raise ConfigError("gradcheck runs on at most 2 layers and token width 32")
    rng = np.random.default_rng(seed + 1)
    with ad.precision("float64"):
        schema = tiny_schema()
        model = T2GFormer(schema, config, rng=seed)
        x_num = rng.standard_normal((batch_size, len(schema.numerical)))
        x_cat = rng.integers(0, 4, size=(batch_size, 1))
        y = rng.standard_normal(batch_size)

        def objective() -> ad.Value:
            return loss(model.forward(x_num, x_cat).predictions, y, "regression")

        tape = ad.GateTape()
        with ad.gate_tape(tape):
            objective()
            tape.replay()
            for p in model.parameters():
                p.zero_grad()
            ad.backward(objective())
            grads = {name: p.grad.copy() for name, p in model.named_parameters()}

            checks = []
            for name, p in model.named_parameters():
                picks = rng.choice(p.data.size, size=min(entries_per_parameter, p.data.size), replace=False)
                numeric, analytic = [], []
                for flat in picks:
                    original = p.data.flat[flat]
                    p.data.flat[flat] = original + step
                    tape.replay()
                    plus = objective().item()
                    p.data.flat[flat] = original - step
                    tape.replay()
                    minus = objective().item()
                    p.data.flat[flat] = original
                    numeric.append((plus - minus) / (2 * step))
                    analytic.append(grads[name].flat[flat])
                numeric, analytic = np.array(numeric), np.array(analytic)
                scale = max(np.linalg.norm(numeric) + np.linalg.norm(analytic), NORM_FLOOR)
                checks.append(
                    ParameterCheck(
                        name=name,
                        group=p.group,
                        relative_error=float(np.linalg.norm(numeric - analytic) / scale),
                        entries=len(picks),
                        analytic_norm=float(np.linalg.norm(grads[name])),
                    )
                )

    straight_through = {
        p.name: float(np.linalg.norm(grads[p.name])) for p in model.topology_parameters()
    }
    return GradcheckReport(checks, tolerance, straight_through)
