"""Run orchestration: seed loops, checkpoints, evaluation, export and sweeps."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from t2g_toolkit.config import OUTPUT_ROOT
from t2g_toolkit.core import autodiff as ad
from t2g_toolkit.core.errors import CheckpointError, ConfigError
from t2g_toolkit.core.models import DataConfig, FeatureSchema, ModelConfig, RunConfig, RunSummary, SeedResult, SplitName
from t2g_toolkit.data.io import PreparedDataset, fit_transform, load_dataset, load_schema
from t2g_toolkit.nn.model import T2GFormer
from t2g_toolkit.training.checkpoint import check_fingerprint, load_checkpoint, restore_model, save_checkpoint
from t2g_toolkit.training.trainer import EpochCallback, evaluate, train

from ..export import write_export

logger = logging.getLogger(__name__)


@dataclass
class SweepRow:
    variant: str
    fr_graph: str
    self_loops: bool
    per_layer_ge: list[bool]
    topology_mode: str
    n_parameters: int
    summary: RunSummary

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "fr_graph": self.fr_graph,
            "self_loops": self.self_loops,
            "per_layer_ge": self.per_layer_ge,
            "topology_mode": self.topology_mode,
            "n_parameters": self.n_parameters,
            "summary": self.summary.model_dump(mode="json"),
        }


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")


class RunService:
    """Everything the CLI does, without the console."""

    def __init__(self, output_root: Path | None = None):
        self.output_root = output_root or OUTPUT_ROOT

    # === Data ===

    def resolve_schema(self, data: DataConfig) -> FeatureSchema:
        if data.schema_file is not None:
            return load_schema(data.schema_file)
        if data.dataset is not None:
            return load_schema(data.dataset)
        raise ConfigError("data needs a schema_file or a bundled dataset key ('ca', 'ch')")

    def prepare(self, data: DataConfig) -> PreparedDataset:
        """Load and preprocess; fitting is deterministic so reloads agree."""
        schema = self.resolve_schema(data)
        dataset = load_dataset(data.path, schema, split_seed=data.split_seed)
        prepared, _ = fit_transform(dataset, data.numerical_transform, seed=data.split_seed)
        prepared.dataset_key = data.dataset
        return prepared

    def output_dir(self, config: RunConfig) -> Path:
        if config.output_dir is not None:
            return config.output_dir
        name = config.data.dataset or Path(config.data.path).stem
        return self.output_root / f"{name}-{config.model.fr_graph}"

    # === Training ===

    def train(
        self,
        config: RunConfig,
        data: PreparedDataset | None = None,
        on_epoch: EpochCallback | None = None,
        on_seed: Callable[[int], None] | None = None,
    ) -> RunSummary:
        """Train once per seed and aggregate test metrics.

        Writes run_config.json, seed_<s>/{best.npz,history.jsonl} and
        summary.json under the run's output directory.
        """
        data = data or self.prepare(config.data)
        out_dir = self.output_dir(config)
        _write_json(out_dir / "run_config.json", config.model_dump(mode="json"))

        results = []
        for seed in config.seeds:
            if on_seed is not None:
                on_seed(seed)
            seed_dir = out_dir / f"seed_{seed}"
            train_config = config.train.model_copy(update={"seed": seed})
            with ad.precision(train_config.precision):
                model = T2GFormer(data.schema, config.model, rng=seed)
                result = train(model, data, train_config, seed_dir / "history.jsonl", on_epoch)
            save_checkpoint(
                seed_dir / "best.npz",
                model,
                config.model_copy(update={"train": train_config}),
                data.state.fingerprint(),
                result.state.to_dict(),
                result.rng_state,
            )
            logger.info("seed %d: val %.5f test %.5f", seed, result.val_metric, result.test_metric)
            results.append(
                SeedResult(
                    seed=seed,
                    best_epoch=result.state.best_epoch,
                    val_metric=result.val_metric,
                    test_metric=result.test_metric,
                    frozen_at_epoch=result.state.frozen_at_epoch,
                    stopped_early=result.state.stopped_early,
                    n_parameters=model.parameter_count(),
                )
            )

        summary = summarize(data.schema, config, results)
        _write_json(out_dir / "summary.json", summary.model_dump(mode="json"))
        return summary

    # === Checkpoints ===

    def _load(self, checkpoint_path: Path, data_config: DataConfig | None):
        checkpoint = load_checkpoint(checkpoint_path)
        run_config = checkpoint.run_config
        data_config = data_config or (run_config.data if run_config else None)
        if data_config is None:
            raise ConfigError(f"{checkpoint_path} has no data configuration; pass the dataset explicitly")
        data = self.prepare(data_config)
        check_fingerprint(checkpoint, data.schema)
        expected = checkpoint.meta.get("preprocess_fingerprint")
        if expected and expected != data.state.fingerprint():
            raise CheckpointError(
                f"preprocessing fingerprint mismatch: checkpoint {expected}, data {data.state.fingerprint()}"
            )
        with ad.precision(run_config.train.precision if run_config else "float32"):
            model = restore_model(checkpoint)
        return model, data

    def evaluate(self, checkpoint_path: Path, split: SplitName = "test", data_config: DataConfig | None = None) -> dict:
        """Metric of a checkpoint on one split; written next to the checkpoint."""
        model, data = self._load(checkpoint_path, data_config)
        metric = evaluate(model, data, split)
        payload = {
            "checkpoint": str(checkpoint_path),
            "split": split,
            "metric": data.schema.metric,
            "value": metric,
            "rows": len(data.splits[split]),
        }
        _write_json(checkpoint_path.parent / f"eval_{split}.json", payload)
        return payload

    def export_graphs(
        self,
        checkpoint_path: Path,
        batch_size: int = 256,
        data_config: DataConfig | None = None,
        out_dir: Path | None = None,
    ) -> list[Path]:
        """FR-Graphs on the first `batch_size` validation rows."""
        model, data = self._load(checkpoint_path, data_config)
        split = data.splits["val"]
        graphs, readouts = model.export_graphs(split.x_num[:batch_size], split.x_cat[:batch_size])
        return write_export(out_dir or checkpoint_path.parent / "graphs", graphs, readouts)

    # === Sweeps ===

    def sweep(self, config: RunConfig, on_variant: Callable[[str], None] | None = None) -> list[SweepRow]:
        """One variant per entry of each sweep axis, all else at the base config."""
        if config.sweep is None:
            raise ConfigError("sweep needs a 'sweep' section in the run config")
        data = self.prepare(config.data)
        base_dir = self.output_dir(config)
        base = config.model
        train_config = config.train
        if config.sweep.max_epochs is not None:
            train_config = train_config.model_copy(update={"max_epochs": config.sweep.max_epochs})

        variants = [(f"base {base.fr_graph}", base)]
        variants += [(f"fr_graph={kind}", base.with_fr_graph(kind)) for kind in config.sweep.fr_graph]
        variants += [(f"self_loops={flag}", base.model_copy(update={"self_loops": flag})) for flag in config.sweep.self_loops]
        variants += [
            (f"per_layer_ge={''.join('1' if on else '0' for on in mask)}", base.model_copy(update={"per_layer_ge": mask}))
            for mask in config.sweep.per_layer_ge
        ]
        variants += [
            (f"topology_mode={mode}", base.model_copy(update={"topology_mode": mode}))
            for mode in config.sweep.topology_mode
        ]

        rows = []
        for index, (label, model_config) in enumerate(variants):
            if on_variant is not None:
                on_variant(label)
            model_config = ModelConfig.model_validate(model_config.model_dump())
            variant = config.model_copy(
                update={
                    "model": model_config,
                    "train": train_config,
                    "output_dir": base_dir / f"variant_{index:02d}",
                    "sweep": None,
                }
            )
            summary = self.train(variant, data)
            with ad.precision(train_config.precision):
                n_parameters = T2GFormer(data.schema, model_config).parameter_count()
            rows.append(
                SweepRow(
                    variant=label,
                    fr_graph=model_config.fr_graph,
                    self_loops=model_config.self_loops,
                    per_layer_ge=model_config.ge_layers,
                    topology_mode=model_config.topology_mode,
                    n_parameters=n_parameters,
                    summary=summary,
                )
            )

        _write_json(base_dir / "sweep.json", [row.to_dict() for row in rows])
        (base_dir / "sweep.md").write_text(sweep_markdown(rows, data.schema.metric))
        return rows


def summarize(schema: FeatureSchema, config: RunConfig, results: list[SeedResult]) -> RunSummary:
    test = np.array([r.test_metric for r in results])
    val = np.array([r.val_metric for r in results])
    return RunSummary(
        dataset=config.data.dataset or schema.name,
        metric=schema.metric,
        fr_graph=config.model.fr_graph,
        seeds=results,
        test_mean=float(test.mean()),
        test_std=float(test.std()),
        val_mean=float(val.mean()),
        val_std=float(val.std()),
    )


def sweep_markdown(rows: list[SweepRow], metric: str) -> str:
    lines = [
        f"| variant | FR-Graph | self-loops | GE layers | topology | params | test {metric} |",
        "|---|---|---|---|---|---|---|",
    ]
    for row in rows:
        ge = "".join("1" if on else "0" for on in row.per_layer_ge)
        lines.append(
            f"| {row.variant} | {row.fr_graph} | {row.self_loops} | {ge} | {row.topology_mode} | "
            f"{row.n_parameters} | {row.summary.test_mean:.4f} ± {row.summary.test_std:.4f} |"
        )
    return "\n".join(lines) + "\n"
