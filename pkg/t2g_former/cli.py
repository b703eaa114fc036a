#!/usr/bin/env python3
"""Train, evaluate and inspect T2G-Former models.

Usage:
    t2g train run.json                          # Train every seed in the config
    t2g train --dataset ca --data data/ca       # Bundled schema, no config file
    t2g train run.json --set train.max_epochs=5 --set seeds=[0,1,2]
    t2g eval runs/ca-SwAt/seed_0/best.npz --split test
    t2g export-graph runs/ca-SwAt/seed_0/best.npz --batch-size 256
    t2g gradcheck                               # Finite-difference check
    t2g sweep sweep.json                        # Ablation table
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from t2g_toolkit.core.errors import CheckpointError, ConfigError, DivergenceError, SchemaError
from t2g_toolkit.core.models import DataConfig, RunConfig

from .gradcheck import run_gradcheck, tiny_config
from .services import RunService

console = Console()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.key=value` overrides; values parse as JSON when they can."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node[parts[-1]] = value
    return raw


def load_run_config(args) -> RunConfig:
    """Config file (optional) + shortcut flags + --set overrides."""
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    data = raw.setdefault("data", {})
    if getattr(args, "data", None):
        data["path"] = args.data
    if getattr(args, "dataset", None):
        data["dataset"] = args.dataset
    if getattr(args, "schema", None):
        data["schema_file"] = args.schema
    if getattr(args, "output", None):
        raw["output_dir"] = args.output
    raw = apply_overrides(raw, args.set or [])
    config = RunConfig.model_validate(raw)
    if not Path(config.data.path).exists():
        raise FileNotFoundError(f"dataset path not found: {config.data.path}")
    return config


def data_override(args) -> DataConfig | None:
    if not args.data:
        return None
    return DataConfig(path=args.data, dataset=args.dataset, schema_file=args.schema)


# === Commands ===


def cmd_train(args) -> int:
    config = load_run_config(args)
    service = RunService()
    out_dir = service.output_dir(config)
    console.print(f"[bold]Training[/bold] {config.model.fr_graph} on [cyan]{config.data.path}[/cyan], seeds {config.seeds}")

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total} epochs"),
        console=console,
    ) as progress:
        task = progress.add_task("starting", total=config.train.max_epochs)

        def on_seed(seed: int) -> None:
            progress.reset(task, description=f"seed {seed}", total=config.train.max_epochs)

        def on_epoch(epoch, model, state) -> None:
            best = f"{state.best_val_metric:.4f}" if state.best_val_metric is not None else "-"
            frozen = " [dim]frozen[/dim]" if state.topology_frozen else ""
            progress.update(task, completed=epoch, description=f"best val {best}{frozen}")

        summary = service.train(config, on_epoch=on_epoch, on_seed=on_seed)

    table = Table(title=f"{summary.dataset} ({summary.metric})")
    table.add_column("seed", justify="right")
    table.add_column("best epoch", justify="right")
    table.add_column("val", justify="right")
    table.add_column("test", justify="right")
    table.add_column("frozen at", justify="right")
    for r in summary.seeds:
        table.add_row(str(r.seed), str(r.best_epoch), f"{r.val_metric:.4f}", f"{r.test_metric:.4f}", str(r.frozen_at_epoch or "-"))
    console.print(table)
    console.print(
        f"[green]test {summary.metric}: {summary.test_mean:.4f} ± {summary.test_std:.4f}[/green]  "
        f"[dim]artifacts in {out_dir}[/dim]"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    payload = RunService().evaluate(Path(args.checkpoint), args.split, data_override(args))
    console.print(f"[green]{payload['split']} {payload['metric']}: {payload['value']:.5f}[/green] [dim]({payload['rows']} rows)[/dim]")
    print(json.dumps(payload))
    return EXIT_OK


def cmd_export_graph(args) -> int:
    out_dir = Path(args.output) if args.output else None
    written = RunService().export_graphs(Path(args.checkpoint), args.batch_size, data_override(args), out_dir)
    for path in written:
        console.print(f"[dim]wrote[/dim] {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    overrides = apply_overrides({}, args.set or [])
    report = run_gradcheck(tiny_config(**overrides), seed=args.seed)

    table = Table(title="Gradient check (float64, central differences)")
    table.add_column("group")
    table.add_column("max relative error", justify="right")
    for group, error in sorted(report.group_max().items()):
        color = "green" if error < report.tolerance else "red"
        table.add_row(group, f"[{color}]{error:.2e}[/{color}]")
    console.print(table)

    live = sum(1 for norm in report.straight_through.values() if norm > 0)
    console.print(f"[dim]straight-through parameters with nonzero gradient: {live}/{len(report.straight_through)}[/dim]")
    if report.passed:
        console.print(f"[green]PASS[/green] all {len(report.checks)} parameters below {report.tolerance:g}")
        return EXIT_OK
    console.print(f"[red]FAIL[/red] {len(report.failures)} parameters above {report.tolerance:g}:")
    for check in report.failures:
        console.print(f"  [red]{check.name}[/red] ({check.group}): {check.relative_error:.2e}")
    return EXIT_FAILURE


def cmd_sweep(args) -> int:
    config = load_run_config(args)
    service = RunService()
    with console.status("[bold]Sweeping...") as status:
        rows = service.sweep(config, on_variant=lambda label: status.update(f"[bold]{label}"))

    table = Table(title=f"Ablation sweep ({rows[0].summary.metric if rows else ''})")
    for column in ("variant", "FR-Graph", "self-loops", "GE layers", "topology", "params", "test"):
        table.add_column(column)
    for row in rows:
        ge = "".join("1" if on else "0" for on in row.per_layer_ge)
        table.add_row(
            row.variant,
            row.fr_graph,
            str(row.self_loops),
            ge,
            row.topology_mode,
            str(row.n_parameters),
            f"{row.summary.test_mean:.4f} ± {row.summary.test_std:.4f}",
        )
    console.print(table)
    console.print(f"[dim]sweep.json and sweep.md in {service.output_dir(config)}[/dim]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="t2g",
        description="Graph-guided transformers for tabular data.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  t2g train --dataset ca --data data/ca --set seeds=[0,1,2,3,4]
  t2g eval runs/ca-SwAt/seed_0/best.npz --split test
  t2g export-graph runs/ca-SwAt/seed_0/best.npz
  t2g gradcheck
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p):
        p.add_argument("--data", help="CSV file or directory with train/val/test.csv")
        p.add_argument("--dataset", help="Bundled dataset key (ca, ch); also picks the batch size")
        p.add_argument("--schema", help="Schema JSON file")

    for name, func, help_text in (
        ("train", cmd_train, "Train one model per seed"),
        ("sweep", cmd_sweep, "Train every ablation variant in the sweep section"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", help="Run config JSON")
        add_data_flags(p)
        p.add_argument("-o", "--output", help="Output directory (default: under T2G_OUTPUT_ROOT)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config value")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-graph", help="Write FR-Graphs as JSON and DOT")
    p.add_argument("checkpoint")
    p.add_argument("-b", "--batch-size", type=int, default=256, help="Reference batch rows from val")
    p.add_argument("-o", "--output", help="Output directory (default: next to the checkpoint)")
    add_data_flags(p)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("gradcheck", help="Check gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a tiny-model config value")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )
    try:
        return args.func(args)
    except FileNotFoundError as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        return EXIT_USAGE
    except (SchemaError, ConfigError, CheckpointError, ValidationError) as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        return EXIT_USAGE
    except DivergenceError as e:
        console.print(f"[red]Training diverged: {escape(str(e))}[/red]")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
