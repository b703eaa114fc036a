"""Write FR-Graph exports as JSON matrices and Graphviz DOT files."""

import json
from pathlib import Path

from t2g_toolkit.core.models import GraphRecord, ReadoutRecord


def _quote(*lines: str) -> str:
    """DOT string literal; several lines are joined with the \\n escape."""
    escaped = (line.replace("\\", "\\\\").replace('"', '\\"') for line in lines)
    return '"' + "\\n".join(escaped) + '"'


def graph_to_dot(graph: GraphRecord, readout: ReadoutRecord | None = None, precision: int = 3) -> str:
    """One digraph per layer.

    An edge i -> j means feature i collects from feature j (A[i][j] = 1),
    labelled with the batch-mean weight G[i][j]. Nodes are identified by
    feature name and display the record's label; nodes the readout selects
    are filled.
    """
    names = graph.feature_names
    labels = graph.labels or names
    lines = [f"digraph {_quote(f'layer_{graph.layer}')} {{", "  node [shape=ellipse];"]
    for i, (name, text) in enumerate(zip(names, labels)):
        if readout is not None and readout.selected[i]:
            label = _quote(text, f"readout {readout.weights[i]:.{precision}f}")
            lines.append(f"  {_quote(name)} [label={label}, style=filled, fillcolor=gray35, fontcolor=white];")
        elif text != name:
            lines.append(f"  {_quote(name)} [label={_quote(text)}];")
        else:
            lines.append(f"  {_quote(name)};")
    for i, source in enumerate(names):
        for j, target in enumerate(names):
            if graph.adjacency[i][j]:
                weight = graph.weights[i][j]
                lines.append(f"  {_quote(source)} -> {_quote(target)} [label={_quote(f'{weight:.{precision}f}')}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_export(out_dir: Path, graphs: list[GraphRecord], readouts: list[ReadoutRecord]) -> list[Path]:
    """graphs.json with every layer, plus layer_<l>.dot per layer."""
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = [
        {"graph": g.model_dump(mode="json"), "readout": r.model_dump(mode="json")}
        for g, r in zip(graphs, readouts)
    ]
    written = [out_dir / "graphs.json"]
    written[0].write_text(json.dumps(payload, indent=2) + "\n")
    for graph, readout in zip(graphs, readouts):
        path = out_dir / f"layer_{graph.layer}.dot"
        path.write_text(graph_to_dot(graph, readout))
        written.append(path)
    return written
