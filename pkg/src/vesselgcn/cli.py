"""Command-line interface: synth, train, eval, predict, gradcheck."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError
from .evaluation import GraphPrediction, PredictionSet, compute_metrics
from .graph import (VesselGraph, edge_labels, load_graph, node_labels,
                    save_graph)
from .model import (ModelConfig, check_model_gradients, load_checkpoint,
                    predict_graph, save_checkpoint)
from .synth import SynthConfig, generate_synthetic, load_manifest, random_graph
from .training import TrainConfig, train


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _dataclass_from_json(cls, path, overrides=None):
    doc = _load_json(path) if path else {}
    if overrides:
        doc.update(overrides)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"{path}: unknown {cls.__name__} keys {sorted(unknown)}")
    return cls(**doc)


def _cmd_synth(args) -> int:
    config = _dataclass_from_json(SynthConfig, args.config)
    manifest = generate_synthetic(config, args.out)
    print(json.dumps({"manifest": str(manifest)}))
    return 0


def _cmd_train(args) -> int:
    dataset = load_manifest(args.data)
    doc = _load_json(args.model_config) if args.model_config else {}
    doc.setdefault("edge_class_count", len(dataset.edge_classes))
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"{args.model_config}: unknown ModelConfig keys {sorted(unknown)}")
    model_config = ModelConfig(**doc)
    train_config = _dataclass_from_json(TrainConfig, args.train_config)
    params, history = train(dataset.train, dataset.val, model_config, train_config)
    save_checkpoint(args.out, params, model_config)
    log_path = args.log or (str(args.out) + ".log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in history["log"]:
            fh.write(json.dumps(entry) + "\n")
    print(json.dumps({"checkpoint": str(args.out), "log": str(log_path),
                      "best_epoch": history["best_epoch"],
                      "best_val_node_acc": history["best_val_node_acc"]}))
    return 0


def _predictions_for(graphs, params, config):
    preds = []
    for graph in graphs:
        node_pred, edge_pred = predict_graph(graph, params, config)
        preds.append(GraphPrediction(
            node_pred=node_pred, node_true=node_labels(graph),
            edge_pred=edge_pred, edge_true=edge_labels(graph),
            scan_id=graph.scan_id))
    return PredictionSet(tuple(preds))


def _cmd_eval(args) -> int:
    dataset = load_manifest(args.data)
    params, config = load_checkpoint(args.ckpt)
    graphs = dataset.split(args.split)
    if not graphs:
        raise ValidationError(f"split {args.split!r} is empty")
    report = compute_metrics(
        _predictions_for(graphs, params, config), set(dataset.cow_class_ids),
        average=args.average, node_class_names=dataset.node_classes,
        edge_class_names=dataset.edge_classes)
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def _cmd_predict(args) -> int:
    params, config = load_checkpoint(args.ckpt)
    graph = load_graph(args.graph, edge_class_count=config.edge_class_count)
    node_pred, edge_pred = predict_graph(graph, params, config)
    labeled = VesselGraph(
        nodes=tuple(dataclasses.replace(n, label=int(c))
                    for n, c in zip(graph.nodes, node_pred)),
        edges=tuple(dataclasses.replace(e, label=int(c))
                    for e, c in zip(graph.edges, edge_pred)),
        extents=graph.extents, scan_id=graph.scan_id)
    save_graph(labeled, args.out)
    print(json.dumps({"out": str(args.out)}))
    return 0


def _cmd_gradcheck(args) -> int:
    config = ModelConfig(hidden_width=args.hidden_width,
                         message_passing_rounds=args.rounds,
                         edge_class_count=args.edge_classes, seed=args.seed)
    graph = random_graph(args.seed, n_nodes=args.nodes, extra_edges=args.extra_edges,
                         edge_class_count=args.edge_classes)
    from .model import init_params
    params = init_params(config, rng_seed=args.seed)
    errors = check_model_gradients(graph, params, config)
    worst = max(errors.values())
    width = max(len(name) for name in errors)
    for name in sorted(errors):
        print(f"{name:<{width}}  {errors[name]:.3e}")
    print(f"{'worst':<{width}}  {worst:.3e}")
    return 0 if worst < 1e-5 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesselgcn",
        description="GCN with deep feature fusion for vascular graph labeling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--config", help="SynthConfig JSON file (defaults if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train and write the best checkpoint")
    p.add_argument("--data", required=True, help="dataset manifest JSON")
    p.add_argument("--model-config", help="ModelConfig JSON file")
    p.add_argument("--train-config", help="TrainConfig JSON file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--average", default="macro", choices=["macro", "micro"])
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="label a single graph file")
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="compare backward() to finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--extra-edges", type=int, default=2)
    p.add_argument("--hidden-width", type=int, default=32)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--edge-classes", type=int, default=8)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, ShapeError, FileNotFoundError, RuntimeError) as err:
        print(json.dumps({"error": str(err)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
