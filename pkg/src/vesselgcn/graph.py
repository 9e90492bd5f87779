"""Attributed vascular graph data model.

Graphs carry bifurcation/ending points as nodes and artery segments as
directed edges.  This module builds the normalized adjacency matrices for
both the node graph and the edge (line) graph, normalizes coordinates, and
implements the rigid translation augmentation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

NODE_CLASS_COUNT = 21
NODE_FEATURE_DIM = 7  # position (3) + radius (1) + direction embedding (3)
EDGE_FEATURE_DIM = 5  # direction (3) + distance (1) + mean radius (1)

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class NodeRecord:
    position: tuple[float, float, float]
    radius: float
    direction: tuple[float, float, float]
    label: Optional[int] = None


@dataclass(frozen=True)
class EdgeRecord:
    sender: int
    receiver: int
    direction: tuple[float, float, float]
    distance: float
    mean_radius: float
    label: Optional[int] = None


@dataclass(frozen=True)
class VesselGraph:
    nodes: tuple[NodeRecord, ...]
    edges: tuple[EdgeRecord, ...]
    extents: tuple[float, float, float] = (1.0, 1.0, 1.0)
    scan_id: str = ""

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class GraphTopology:
    node_adjacency: np.ndarray  # N x N, symmetric-normalized
    edge_adjacency: np.ndarray  # K x K, symmetric-normalized line graph
    incidence_in: np.ndarray    # N x K, 1 where node is receiver
    incidence_out: np.ndarray   # N x K, 1 where node is sender


def _is_unit_or_zero(vec: Sequence[float]) -> bool:
    norm = math.sqrt(sum(float(v) * float(v) for v in vec))
    return norm == 0.0 or abs(norm - 1.0) <= _UNIT_TOL


def validate_graph(graph: VesselGraph, edge_class_count: Optional[int] = None) -> None:
    """Enforce the structural invariants of a VesselGraph.

    Raises ValidationError with a message locating the offending record.
    """
    n = graph.node_count
    if n < 1:
        raise ValidationError("graph must contain at least one node")
    for i, node in enumerate(graph.nodes):
        if len(node.position) != 3 or not all(math.isfinite(p) for p in node.position):
            raise ValidationError(f"nodes[{i}].position is not a finite 3-vector: {node.position!r}")
        if not math.isfinite(node.radius) or node.radius < 0:
            raise ValidationError(f"nodes[{i}].radius must be finite and >= 0, got {node.radius!r}")
        if len(node.direction) != 3 or not _is_unit_or_zero(node.direction):
            raise ValidationError(f"nodes[{i}].direction must be unit norm or zero: {node.direction!r}")
        if node.label is not None and not 0 <= node.label < NODE_CLASS_COUNT:
            raise ValidationError(f"nodes[{i}].label = {node.label!r} outside [0, {NODE_CLASS_COUNT})")
    for k, edge in enumerate(graph.edges):
        if not 0 <= edge.sender < n:
            raise ValidationError(f"edges[{k}].sender = {edge.sender!r} outside node index range [0, {n})")
        if not 0 <= edge.receiver < n:
            raise ValidationError(f"edges[{k}].receiver = {edge.receiver!r} outside node index range [0, {n})")
        if edge.sender == edge.receiver:
            raise ValidationError(f"edges[{k}] is a self-loop at node {edge.sender}")
        if len(edge.direction) != 3 or not _is_unit_or_zero(edge.direction) or all(d == 0 for d in edge.direction):
            raise ValidationError(f"edges[{k}].direction must be unit norm: {edge.direction!r}")
        if not math.isfinite(edge.distance) or edge.distance <= 0:
            raise ValidationError(f"edges[{k}].distance must be > 0, got {edge.distance!r}")
        if not math.isfinite(edge.mean_radius) or edge.mean_radius < 0:
            raise ValidationError(f"edges[{k}].mean_radius must be >= 0, got {edge.mean_radius!r}")
        if edge.label is not None:
            if edge.label < 0 or (edge_class_count is not None and edge.label >= edge_class_count):
                raise ValidationError(f"edges[{k}].label = {edge.label!r} outside [0, {edge_class_count})")


def node_feature_matrix(graph: VesselGraph) -> np.ndarray:
    """N x 7 feature matrix: position, radius, direction embedding."""
    out = np.empty((graph.node_count, NODE_FEATURE_DIM), dtype=np.float64)
    for i, node in enumerate(graph.nodes):
        out[i, 0:3] = node.position
        out[i, 3] = node.radius
        out[i, 4:7] = node.direction
    return out


def edge_feature_matrix(graph: VesselGraph) -> np.ndarray:
    """K x 5 feature matrix: direction, distance, mean radius."""
    out = np.empty((graph.edge_count, EDGE_FEATURE_DIM), dtype=np.float64)
    for k, edge in enumerate(graph.edges):
        out[k, 0:3] = edge.direction
        out[k, 3] = edge.distance
        out[k, 4] = edge.mean_radius
    return out


def node_labels(graph: VesselGraph) -> np.ndarray:
    if any(n.label is None for n in graph.nodes):
        raise ValidationError(f"graph {graph.scan_id!r} has unlabeled nodes")
    return np.array([n.label for n in graph.nodes], dtype=np.int64)


def edge_labels(graph: VesselGraph) -> np.ndarray:
    if any(e.label is None for e in graph.edges):
        raise ValidationError(f"graph {graph.scan_id!r} has unlabeled edges")
    return np.array([e.label for e in graph.edges], dtype=np.int64)


def normalize_adjacency(raw_adjacency: np.ndarray) -> np.ndarray:
    """Symmetric renormalization with self-loops.

    Given a binary symmetric adjacency A with zero diagonal, returns
    D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I.
    Computed elementwise as (A+I)[i,j] / sqrt(d_i * d_j), which keeps the
    result bitwise symmetric and permutation-equivariant.
    """
    a = np.asarray(raw_adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency must be symmetric")
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ValidationError("adjacency entries must be 0 or 1")
    if np.any(np.diag(a) != 0.0):
        raise ValidationError("adjacency must have zero diagonal")
    n = a.shape[0]
    a_hat = a + np.eye(n)
    deg = a_hat.sum(axis=1)
    return a_hat / np.sqrt(np.outer(deg, deg))


def build_topology(graph: VesselGraph) -> GraphTopology:
    """Normalized node and line-graph adjacency plus incidence matrices.

    Two edges are adjacent in the line graph iff they share an endpoint;
    edge direction is ignored for connectivity.
    """
    validate_graph(graph)
    n, k = graph.node_count, graph.edge_count

    node_adj = np.zeros((n, n), dtype=np.float64)
    for edge in graph.edges:
        node_adj[edge.sender, edge.receiver] = 1.0
        node_adj[edge.receiver, edge.sender] = 1.0
    node_adjacency = normalize_adjacency(node_adj)

    incidence_in = np.zeros((n, k), dtype=np.float64)
    incidence_out = np.zeros((n, k), dtype=np.float64)
    for j, edge in enumerate(graph.edges):
        incidence_in[edge.receiver, j] = 1.0
        incidence_out[edge.sender, j] = 1.0

    if k == 0:
        edge_adjacency = np.zeros((0, 0), dtype=np.float64)
    else:
        endpoints = [frozenset((e.sender, e.receiver)) for e in graph.edges]
        edge_adj = np.zeros((k, k), dtype=np.float64)
        for i in range(k):
            for j in range(i + 1, k):
                if endpoints[i] & endpoints[j]:
                    edge_adj[i, j] = edge_adj[j, i] = 1.0
        edge_adjacency = normalize_adjacency(edge_adj)

    return GraphTopology(node_adjacency, edge_adjacency, incidence_in, incidence_out)


def normalize_positions(graph: VesselGraph, extents: Sequence[float]) -> VesselGraph:
    """Divide every position component by the image extent along its axis."""
    ex = tuple(float(e) for e in extents)
    if len(ex) != 3 or any(e <= 0 for e in ex):
        raise ValidationError(f"extents must be three positive reals, got {extents!r}")
    nodes = []
    for i, node in enumerate(graph.nodes):
        if any(not 0 <= p <= e for p, e in zip(node.position, ex)):
            raise ValidationError(f"nodes[{i}].position {node.position!r} outside extents {ex!r}")
        pos = tuple(p / e for p, e in zip(node.position, ex))
        nodes.append(replace(node, position=pos))
    return replace(graph, nodes=tuple(nodes), extents=(1.0, 1.0, 1.0))


def augment_translate(graph: VesselGraph, rng_seed: int, max_fraction: float = 0.10) -> VesselGraph:
    """Rigid random translation of all node positions.

    One offset vector with components uniform on [-max_fraction, +max_fraction]
    is added to every node, preserving all pairwise distances; edge features
    are untouched.  Deterministic for a given seed.
    """
    if max_fraction < 0:
        raise ValidationError(f"max_fraction must be >= 0, got {max_fraction!r}")
    if max_fraction == 0:
        return graph
    rng = np.random.default_rng(rng_seed)
    offset = rng.uniform(-max_fraction, max_fraction, size=3)
    nodes = tuple(
        replace(node, position=tuple(p + o for p, o in zip(node.position, offset)))
        for node in graph.nodes
    )
    return replace(graph, nodes=nodes)


# --- JSON serialization -------------------------------------------------
#
# Reals are serialized as shortest round-trip decimal strings (<= 17
# significant digits) so that save -> load -> save is byte-identical.

def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_real(value, where: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: expected a real number string, got {value!r}")
    if not math.isfinite(x):
        raise ValidationError(f"{where}: non-finite value {value!r}")
    return x


def _parse_vec3(value, where: str) -> tuple[float, float, float]:
    if not isinstance(value, list) or len(value) != 3:
        raise ValidationError(f"{where}: expected a 3-vector, got {value!r}")
    return tuple(_parse_real(v, f"{where}[{i}]") for i, v in enumerate(value))


def _parse_label(value, where: str) -> Optional[int]:
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool):
        raise ValidationError(f"{where}: label must be an integer or null, got {value!r}")
    return value


def graph_to_dict(graph: VesselGraph) -> dict:
    return {
        "nodes": [
            {
                "pos": [_fmt(p) for p in n.position],
                "radius": _fmt(n.radius),
                "dir": [_fmt(d) for d in n.direction],
                "label": n.label,
            }
            for n in graph.nodes
        ],
        "edges": [
            {
                "s": e.sender,
                "r": e.receiver,
                "dir": [_fmt(d) for d in e.direction],
                "dist": _fmt(e.distance),
                "mean_radius": _fmt(e.mean_radius),
                "label": e.label,
            }
            for e in graph.edges
        ],
        "meta": {"extents": [_fmt(e) for e in graph.extents], "scan_id": graph.scan_id},
    }


def graph_from_dict(doc: dict, where: str = "graph",
                    edge_class_count: Optional[int] = None) -> VesselGraph:
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise ValidationError(f"{where}: document must contain 'nodes' and 'edges'")
    nodes = []
    for i, nd in enumerate(doc["nodes"]):
        w = f"{where}.nodes[{i}]"
        nodes.append(NodeRecord(
            position=_parse_vec3(nd.get("pos"), f"{w}.pos"),
            radius=_parse_real(nd.get("radius"), f"{w}.radius"),
            direction=_parse_vec3(nd.get("dir"), f"{w}.dir"),
            label=_parse_label(nd.get("label"), f"{w}.label"),
        ))
    edges = []
    for k, ed in enumerate(doc["edges"]):
        w = f"{where}.edges[{k}]"
        for key in ("s", "r"):
            if not isinstance(ed.get(key), int) or isinstance(ed.get(key), bool):
                raise ValidationError(f"{w}.{key}: expected an integer node index, got {ed.get(key)!r}")
        edges.append(EdgeRecord(
            sender=ed["s"],
            receiver=ed["r"],
            direction=_parse_vec3(ed.get("dir"), f"{w}.dir"),
            distance=_parse_real(ed.get("dist"), f"{w}.dist"),
            mean_radius=_parse_real(ed.get("mean_radius"), f"{w}.mean_radius"),
            label=_parse_label(ed.get("label"), f"{w}.label"),
        ))
    meta = doc.get("meta", {})
    extents = tuple(_parse_real(e, f"{where}.meta.extents") for e in meta.get("extents", [1, 1, 1]))
    if len(extents) != 3 or any(e <= 0 for e in extents):
        raise ValidationError(f"{where}.meta.extents must be three positive reals, got {extents!r}")
    graph = VesselGraph(nodes=tuple(nodes), edges=tuple(edges),
                        extents=extents, scan_id=str(meta.get("scan_id", "")))
    try:
        validate_graph(graph, edge_class_count=edge_class_count)
    except ValidationError as err:
        raise ValidationError(f"{where}: {err}") from None
    for i, node in enumerate(graph.nodes):
        if any(not 0.0 <= p <= 1.0 for p in node.position):
            raise ValidationError(
                f"{where}.nodes[{i}].pos = {node.position!r} not normalized to [0,1]")
    return graph


def dumps_graph(graph: VesselGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=1) + "\n"


def save_graph(graph: VesselGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_graph(graph))


def load_graph(path, edge_class_count: Optional[int] = None) -> VesselGraph:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: invalid JSON ({err})") from None
    return graph_from_dict(doc, where=str(path), edge_class_count=edge_class_count)
