"""Labeling metrics over sets of predicted graphs.

Six scores are reported: node accuracy, mean wrong nodes per scan, fraction
of scans with all circle-of-Willis nodes correct, edge accuracy, and overall
precision/recall over node and edge classes jointly, plus a per-class
precision/recall table.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class GraphPrediction:
    node_pred: np.ndarray
    node_true: np.ndarray
    edge_pred: np.ndarray
    edge_true: np.ndarray
    scan_id: str = ""

    def __post_init__(self):
        if len(self.node_pred) != len(self.node_true):
            raise ValidationError(f"scan {self.scan_id!r}: node prediction length "
                                  f"{len(self.node_pred)} != truth length {len(self.node_true)}")
        if len(self.edge_pred) != len(self.edge_true):
            raise ValidationError(f"scan {self.scan_id!r}: edge prediction length "
                                  f"{len(self.edge_pred)} != truth length {len(self.edge_true)}")


@dataclass(frozen=True)
class PredictionSet:
    graphs: Tuple[GraphPrediction, ...]

    def __post_init__(self):
        if len(self.graphs) == 0:
            raise ValidationError("prediction set is empty")


@dataclass(frozen=True)
class MetricsReport:
    node_acc: float
    node_wrong: float
    cow_node_solve: float
    edge_acc: float
    precision: float
    recall: float
    per_class: Dict[str, Tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "node_acc": self.node_acc,
            "node_wrong": self.node_wrong,
            "cow_node_solve": self.cow_node_solve,
            "edge_acc": self.edge_acc,
            "precision": self.precision,
            "recall": self.recall,
            "per_class": {k: {"precision": p, "recall": r}
                          for k, (p, r) in self.per_class.items()},
        }


def node_accuracy(preds: PredictionSet) -> float:
    """Micro accuracy: correct nodes / total nodes across all graphs."""
    total = sum(len(g.node_true) for g in preds.graphs)
    if total == 0:
        raise ValidationError("no nodes in prediction set")
    correct = sum(int(np.sum(np.asarray(g.node_pred) == np.asarray(g.node_true)))
                  for g in preds.graphs)
    return correct / total


def node_wrong(preds: PredictionSet) -> float:
    """Mean count of mislabeled nodes per scan."""
    wrong = [int(np.sum(np.asarray(g.node_pred) != np.asarray(g.node_true)))
             for g in preds.graphs]
    return float(np.mean(wrong))


def cow_node_solve(preds: PredictionSet, cow_class_set: Set[int]) -> float:
    """Fraction of scans whose circle-of-Willis nodes are all correct.

    Scans with no CoW nodes count as solved.
    """
    if not cow_class_set:
        raise ValidationError("CoW class set is empty")
    solved = 0
    for g in preds.graphs:
        true = np.asarray(g.node_true)
        pred = np.asarray(g.node_pred)
        cow = np.isin(true, list(cow_class_set))
        if np.all(pred[cow] == true[cow]):
            solved += 1
    return solved / len(preds.graphs)


def edge_accuracy(preds: PredictionSet) -> float:
    """Micro accuracy over all edges."""
    total = sum(len(g.edge_true) for g in preds.graphs)
    if total == 0:
        raise ValidationError("no edges in prediction set")
    correct = sum(int(np.sum(np.asarray(g.edge_pred) == np.asarray(g.edge_true)))
                  for g in preds.graphs)
    return correct / total


def _items(preds: PredictionSet):
    """(true, pred) pairs with classes namespaced by kind."""
    for g in preds.graphs:
        for t, p in zip(g.node_true, g.node_pred):
            yield ("node", int(t)), ("node", int(p))
        for t, p in zip(g.edge_true, g.edge_pred):
            yield ("edge", int(t)), ("edge", int(p))


def precision_recall(preds: PredictionSet, average: str = "macro",
                     node_class_names: Optional[Sequence[str]] = None,
                     edge_class_names: Optional[Sequence[str]] = None):
    """Overall precision/recall over node and edge classes jointly.

    Macro averages are taken over classes present in the ground truth;
    classes with zero predicted positives contribute precision 0.  Returns
    (precision, recall, per-class table keyed by class name).
    """
    if average not in ("macro", "micro"):
        raise ValidationError(f"average must be 'macro' or 'micro', got {average!r}")
    tp: Dict[tuple, int] = {}
    fp: Dict[tuple, int] = {}
    fn: Dict[tuple, int] = {}
    truth_classes = set()
    for true, pred in _items(preds):
        truth_classes.add(true)
        if pred == true:
            tp[true] = tp.get(true, 0) + 1
        else:
            fp[pred] = fp.get(pred, 0) + 1
            fn[true] = fn.get(true, 0) + 1

    def class_name(cls):
        kind, idx = cls
        names = node_class_names if kind == "node" else edge_class_names
        if names is not None and 0 <= idx < len(names):
            return f"{kind}:{names[idx]}"
        return f"{kind}:{idx}"

    table = {}
    precisions, recalls = [], []
    for cls in sorted(truth_classes):
        t, f_pos, f_neg = tp.get(cls, 0), fp.get(cls, 0), fn.get(cls, 0)
        p = t / (t + f_pos) if t + f_pos else 0.0
        r = t / (t + f_neg) if t + f_neg else 0.0
        table[class_name(cls)] = (p, r)
        precisions.append(p)
        recalls.append(r)

    if average == "macro":
        precision = float(np.mean(precisions))
        recall = float(np.mean(recalls))
    else:
        t_sum = sum(tp.get(c, 0) for c in truth_classes)
        fp_sum = sum(fp.get(c, 0) for c in truth_classes)
        fn_sum = sum(fn.get(c, 0) for c in truth_classes)
        precision = t_sum / (t_sum + fp_sum) if t_sum + fp_sum else 0.0
        recall = t_sum / (t_sum + fn_sum) if t_sum + fn_sum else 0.0
    return precision, recall, table


def compute_metrics(preds: PredictionSet, cow_class_set: Set[int],
                    average: str = "macro",
                    node_class_names: Optional[Sequence[str]] = None,
                    edge_class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    precision, recall, table = precision_recall(
        preds, average=average,
        node_class_names=node_class_names, edge_class_names=edge_class_names)
    return MetricsReport(
        node_acc=node_accuracy(preds),
        node_wrong=node_wrong(preds),
        cow_node_solve=cow_node_solve(preds, cow_class_set),
        edge_acc=edge_accuracy(preds),
        precision=precision,
        recall=recall,
        per_class=table,
    )
