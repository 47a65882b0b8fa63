"""Line-delimited graph file format.

Node line: ``N<TAB><node_type><TAB><id><TAB><comma-separated floats>``
Edge line: ``E<TAB><edge_type><TAB><src_type>:<src_id><TAB><dst_type>:<dst_id><TAB><weight><TAB><0|1>``

Node lines must precede any edge line referencing them. Floats use the
shortest decimal representation that round-trips, so ``read(write(g))``
reproduces features bit-identically. The trailing edge field marks a
reciprocal insert: the reader materializes both directions from one line.
The writer always emits stored edges individually with the flag at 0,
which keeps the round-trip exact even when reverse edges were added
manually.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import GraphParseError, JobGraphError
from .graph import EdgeType, HeteroGraph, NodeRef, NodeType, node_type_from_name

_FLOAT32_FMT = np.format_float_shortest if hasattr(np, "format_float_shortest") else None


def _fmt_f32(value: np.float32) -> str:
    # str() of a numpy scalar is its shortest round-trip decimal form
    return str(np.float32(value))


def _fmt_weight(value: float) -> str:
    return repr(float(value))


def write_graph(graph: HeteroGraph, path: str) -> None:
    """Serialize nodes (insertion order per type) then edges (canonical type order)."""
    with open(path, "w", encoding="utf-8") as fh:
        for node_type in NodeType:
            for node in graph.nodes(node_type):
                feats = graph.features_of(node)
                fh.write(
                    f"N\t{node_type.value}\t{node.id}\t"
                    + ",".join(_fmt_f32(v) for v in feats)
                    + "\n"
                )
        for edge_type in graph.edge_types_present():
            for src, dst, weight in graph.edges(edge_type):
                fh.write(
                    f"E\t{edge_type.name}\t{src}\t{dst}\t{_fmt_weight(weight)}\t0\n"
                )


def read_graph(path: str) -> HeteroGraph:
    """Parse a graph file, enforcing the schema; errors carry the line number."""
    graph = HeteroGraph()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            tag = fields[0]
            try:
                if tag == "N":
                    _read_node(graph, fields)
                elif tag == "E":
                    _read_edge(graph, fields)
                else:
                    raise ValueError(f"unknown record tag {tag!r}")
            except GraphParseError:
                raise
            except (ValueError, JobGraphError) as exc:
                raise GraphParseError(path, line_no, str(exc)) from None
    return graph


def _read_node(graph: HeteroGraph, fields: list[str]) -> None:
    if len(fields) != 4:
        raise ValueError(f"node line needs 4 fields, got {len(fields)}")
    node_type = node_type_from_name(fields[1])
    node_id = int(fields[2])
    if node_id < 0:
        raise ValueError(f"node id must be non-negative, got {node_id}")
    features = [float(tok) for tok in fields[3].split(",")] if fields[3] else []
    if not features:
        raise ValueError("node line has an empty feature list")
    if not all(math.isfinite(v) for v in features):
        raise ValueError("node features must be finite")
    graph.add_node(NodeRef(node_type, node_id), np.asarray(features, dtype=np.float32))


def _read_edge(graph: HeteroGraph, fields: list[str]) -> None:
    if len(fields) != 6:
        raise ValueError(f"edge line needs 6 fields, got {len(fields)}")
    edge_type = EdgeType.parse(fields[1])
    src = NodeRef.parse(fields[2])
    dst = NodeRef.parse(fields[3])
    weight = float(fields[4])
    if fields[5] not in ("0", "1"):
        raise ValueError(f"reciprocal flag must be 0 or 1, got {fields[5]!r}")
    if not graph.has_node(src):
        raise ValueError(f"edge references undeclared node {src}")
    if not graph.has_node(dst):
        raise ValueError(f"edge references undeclared node {dst}")
    graph.add_edge(edge_type, src, dst, weight, reciprocal=fields[5] == "1")
