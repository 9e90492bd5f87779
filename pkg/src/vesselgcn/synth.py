"""Synthetic vascular-style graph generator and dataset manifest handling.

Generated graphs are random spanning trees in the unit cube with occasional
cross edges (mimicking the anastomotic loop of real cerebral vasculature).
Node labels follow a deterministic geometric rule (position octant crossed
with a degree bucket) plus optional label noise, and edge labels are a hash
of the endpoint label pair, so the labels are learnable from the features
and topology by construction.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .graph import (NODE_CLASS_COUNT, EdgeRecord, NodeRecord, VesselGraph,
                    load_graph, save_graph)


@dataclass(frozen=True)
class SynthConfig:
    train_count: int = 20
    val_count: int = 5
    test_count: int = 5
    node_count_min: int = 12
    node_count_max: int = 24
    cross_edge_prob: float = 0.10
    label_margin: float = 0.15
    noise: float = 0.0
    edge_class_count: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.train_count, self.val_count, self.test_count) < 1:
            raise ValidationError("split counts must be >= 1")
        if self.node_count_min < 2 or self.node_count_max < self.node_count_min:
            raise ValidationError("node count range must satisfy 2 <= min <= max")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")
        if not 0 <= self.label_margin < 0.4:
            raise ValidationError("label_margin must be in [0, 0.4)")


def geometric_label(position: Sequence[float], degree: int) -> int:
    """Octant of the position crossed with a degree bucket, mod 21."""
    octant = (4 * (position[0] > 0.5) + 2 * (position[1] > 0.5) + (position[2] > 0.5))
    bucket = min(degree, 3) - 1
    return (octant * 3 + bucket) % NODE_CLASS_COUNT


def edge_label_rule(sender_label: int, receiver_label: int, edge_class_count: int) -> int:
    return (3 * sender_label + 7 * receiver_label) % edge_class_count


def generate_graph(rng: np.random.Generator, config: SynthConfig, scan_id: str,
                   root_octant: Optional[int] = None) -> VesselGraph:
    n = int(rng.integers(config.node_count_min, config.node_count_max + 1))

    # grow a spatially coherent tree: children sprout near their parents,
    # like artery segments branching off a vessel
    def push_from_boundaries(p: np.ndarray) -> np.ndarray:
        # keep each coordinate at least label_margin away from the octant
        # plane at 0.5, so labels stay decodable from smoothed positions
        m = config.label_margin
        out = p.copy()
        low = (out > 0.5 - m) & (out <= 0.5)
        high = (out > 0.5) & (out < 0.5 + m)
        out[low] = 0.5 - m
        out[high] = 0.5 + m
        return out

    positions = np.empty((n, 3))
    if root_octant is None:
        root = rng.uniform(0.05, 0.95, size=3)
    else:
        # stratified roots keep every octant represented in each split
        m = config.label_margin
        bits = (root_octant >> 2 & 1, root_octant >> 1 & 1, root_octant & 1)
        root = np.array([rng.uniform(0.5 + m, 0.95) if b else rng.uniform(0.05, 0.5 - m)
                         for b in bits])
    positions[0] = push_from_boundaries(root)
    pairs = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        while True:
            for _ in range(32):
                step = rng.normal(size=3)
                step *= rng.uniform(0.06, 0.14) / np.linalg.norm(step)
                candidate = positions[parent] + step
                if np.all((candidate >= 0.02) & (candidate <= 0.98)):
                    break
            candidate = push_from_boundaries(np.clip(candidate, 0.02, 0.98))
            if np.linalg.norm(candidate - positions[parent]) > 1e-6:
                break
        positions[i] = candidate
        pairs.append((parent, i))

    # occasional cross edges between spatially close nodes, mimicking the
    # anastomotic loop of the circle of Willis
    existing = {frozenset(p) for p in pairs}
    for _ in range(n):
        if rng.uniform() < config.cross_edge_prob:
            a, b = (int(v) for v in rng.integers(0, n, size=2))
            key = frozenset((a, b))
            if a != b and key not in existing and np.linalg.norm(positions[a] - positions[b]) < 0.25:
                pairs.append((a, b))
                existing.add(key)

    degree = np.zeros(n, dtype=np.int64)
    tangent_sum = np.zeros((n, 3))
    edge_geom = []
    for s, r in pairs:
        delta = positions[r] - positions[s]
        dist = float(np.linalg.norm(delta))
        direction = delta / dist
        edge_geom.append((s, r, direction, dist))
        degree[s] += 1
        degree[r] += 1
        tangent_sum[s] += direction
        tangent_sum[r] += direction

    # vessels thicken toward bifurcation points: radius tracks degree
    radii = 0.02 * np.minimum(degree, 4) + rng.uniform(0.002, 0.01, size=n)

    labels = np.array([geometric_label(positions[i], int(degree[i])) for i in range(n)])
    if config.noise > 0:
        flip = rng.uniform(size=n) < config.noise
        labels[flip] = rng.integers(0, NODE_CLASS_COUNT, size=int(flip.sum()))

    nodes = []
    for i in range(n):
        norm = float(np.linalg.norm(tangent_sum[i]))
        if norm > 1e-12:
            embedding = tuple(tangent_sum[i] / norm)
        else:
            embedding = (0.0, 0.0, 0.0)
        nodes.append(NodeRecord(position=tuple(positions[i]), radius=float(radii[i]),
                                direction=embedding, label=int(labels[i])))

    edges = []
    for s, r, direction, dist in edge_geom:
        edges.append(EdgeRecord(
            sender=s, receiver=r, direction=tuple(direction), distance=dist,
            mean_radius=float(0.5 * (radii[s] + radii[r])),
            label=edge_label_rule(int(labels[s]), int(labels[r]), config.edge_class_count)))

    return VesselGraph(nodes=tuple(nodes), edges=tuple(edges), scan_id=scan_id)


def random_graph(seed: int, n_nodes: int = 8, extra_edges: int = 2,
                 edge_class_count: int = 8) -> VesselGraph:
    """Small random labeled graph with exactly n_nodes-1+extra_edges edges."""
    rng = np.random.default_rng(seed)
    config = SynthConfig(node_count_min=n_nodes, node_count_max=n_nodes,
                         cross_edge_prob=0.0, edge_class_count=edge_class_count,
                         seed=seed)
    graph = generate_graph(rng, config, scan_id=f"random-{seed}")
    # add cross edges deterministically until the requested count is reached
    existing = {frozenset((e.sender, e.receiver)) for e in graph.edges}
    edges = list(graph.edges)
    positions = np.array([n.position for n in graph.nodes])
    radii = [n.radius for n in graph.nodes]
    labels = [n.label for n in graph.nodes]
    while len(edges) < n_nodes - 1 + extra_edges:
        a, b = (int(v) for v in rng.integers(0, n_nodes, size=2))
        if a == b or frozenset((a, b)) in existing:
            continue
        delta = positions[b] - positions[a]
        dist = float(np.linalg.norm(delta))
        edges.append(EdgeRecord(
            sender=a, receiver=b, direction=tuple(delta / dist), distance=dist,
            mean_radius=float(0.5 * (radii[a] + radii[b])),
            label=edge_label_rule(labels[a], labels[b], edge_class_count)))
        existing.add(frozenset((a, b)))
    return VesselGraph(nodes=graph.nodes, edges=tuple(edges), scan_id=graph.scan_id)


DEFAULT_COW_CLASS_IDS = (0, 1, 2, 3, 4, 5)


@dataclass(frozen=True)
class Dataset:
    train: tuple
    val: tuple
    test: tuple
    node_classes: tuple
    edge_classes: tuple
    cow_class_ids: frozenset

    def split(self, name: str):
        if name not in ("train", "val", "test"):
            raise ValidationError(f"unknown split {name!r}")
        return getattr(self, name)


def generate_synthetic(config: SynthConfig, out_dir) -> Path:
    """Write graph files and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    manifest = {"train": [], "val": [], "test": []}
    for split, count in (("train", config.train_count),
                         ("val", config.val_count),
                         ("test", config.test_count)):
        for i in range(count):
            scan_id = f"{split}_{i:03d}"
            graph = generate_graph(rng, config, scan_id, root_octant=i % 8)
            fname = f"{scan_id}.json"
            save_graph(graph, out / fname)
            manifest[split].append(fname)
    manifest["node_classes"] = [f"node_type_{i:02d}" for i in range(NODE_CLASS_COUNT)]
    manifest["edge_classes"] = [f"edge_type_{i:02d}" for i in range(config.edge_class_count)]
    manifest["cow_class_ids"] = list(DEFAULT_COW_CLASS_IDS)
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=1) + "\n")
    return manifest_path


def load_manifest(path) -> Dataset:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("train", "val", "test", "node_classes", "edge_classes", "cow_class_ids"):
        if key not in doc:
            raise ValidationError(f"{path}: manifest missing key {key!r}")
    if len(doc["node_classes"]) != NODE_CLASS_COUNT:
        raise ValidationError(f"{path}: node_classes must list {NODE_CLASS_COUNT} names, "
                              f"got {len(doc['node_classes'])}")
    edge_class_count = len(doc["edge_classes"])
    if edge_class_count < 1:
        raise ValidationError(f"{path}: edge_classes is empty")
    splits = {k: list(doc[k]) for k in ("train", "val", "test")}
    seen = {}
    for name, files in splits.items():
        for f in files:
            if f in seen:
                raise ValidationError(f"{path}: file {f!r} appears in both "
                                      f"{seen[f]!r} and {name!r} splits")
            seen[f] = name
    cow = frozenset(int(c) for c in doc["cow_class_ids"])
    if any(not 0 <= c < NODE_CLASS_COUNT for c in cow):
        raise ValidationError(f"{path}: cow_class_ids outside [0, {NODE_CLASS_COUNT})")
    base = path.parent
    loaded = {name: tuple(load_graph(base / f, edge_class_count=edge_class_count)
                          for f in files)
              for name, files in splits.items()}
    return Dataset(train=loaded["train"], val=loaded["val"], test=loaded["test"],
                   node_classes=tuple(doc["node_classes"]),
                   edge_classes=tuple(doc["edge_classes"]),
                   cow_class_ids=cow)
