"""Adam training loop with per-epoch augmentation and best-checkpoint retention."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .autodiff import Tape, Var
from .errors import ValidationError
from .evaluation import PredictionSet, GraphPrediction, node_accuracy
from .graph import (VesselGraph, augment_translate, build_topology,
                    edge_labels, node_labels)
from .model import (ModelConfig, ModelParams, init_params, model_edge_features,
                    model_forward, model_node_features, predict_graph)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    learning_rate: float = 0.001
    augment: bool = True
    max_translate: float = 0.10
    node_loss_weight: float = 1.0
    edge_loss_weight: float = 1.0
    validation_metric: str = "node_acc"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if self.validation_metric != "node_acc":
            raise ValidationError(f"unsupported validation metric {self.validation_metric!r}")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 0.001

    @classmethod
    def fresh(cls, params: Dict[str, np.ndarray], learning_rate: float = 0.001) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()},
                   learning_rate=learning_rate)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameters, mutates state."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    updated = {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape "
                                  f"{theta.shape} for {name!r}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        updated[name] = theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


def total_loss(tape: Tape, node_logits: Var, edge_logits: Var,
               node_targets: np.ndarray, edge_targets: np.ndarray,
               node_weight: float = 1.0, edge_weight: float = 1.0) -> Var:
    """Weighted sum of node and edge softmax cross-entropies."""
    loss = tape.scale(tape.softmax_cross_entropy(node_logits, node_targets), node_weight)
    if edge_logits.value.shape[0]:
        edge_ce = tape.scale(tape.softmax_cross_entropy(edge_logits, edge_targets), edge_weight)
        loss = tape.add(loss, edge_ce)
    return loss


def _graph_gradients(graph_feats, topology, targets, params: ModelParams,
                     config: ModelConfig, weights):
    tape = Tape()
    node_logits, edge_logits = model_forward(
        topology, graph_feats[0], graph_feats[1], params, config, tape)
    loss = total_loss(tape, node_logits, edge_logits, targets[0], targets[1],
                      weights[0], weights[1])
    return float(loss.value), tape.backward(loss)


def evaluate_node_accuracy(graphs: Sequence[VesselGraph], params: ModelParams,
                           config: ModelConfig, topologies=None) -> float:
    preds = []
    for i, graph in enumerate(graphs):
        topo = topologies[i] if topologies is not None else None
        node_pred, edge_pred = predict_graph(graph, params, config, topology=topo)
        preds.append(GraphPrediction(
            node_pred=node_pred, node_true=node_labels(graph),
            edge_pred=edge_pred, edge_true=edge_labels(graph),
            scan_id=graph.scan_id))
    return node_accuracy(PredictionSet(tuple(preds)))


def train(train_graphs: Sequence[VesselGraph], val_graphs: Sequence[VesselGraph],
          model_config: ModelConfig, train_config: TrainConfig):
    """Train the model; returns (best ModelParams, training log).

    Per epoch: seeded shuffle, a fresh rigid translation per graph, one Adam
    step per mini-batch with the loss averaged over the batch's graphs, then
    validation node accuracy.  Parameters from the best validation epoch are
    retained (ties resolved toward the earlier epoch).
    """
    if len(train_graphs) == 0 or len(val_graphs) == 0:
        raise ValidationError("train and validation splits must be non-empty")

    params = init_params(model_config, rng_seed=model_config.seed)
    named = params.named()
    state = AdamState.fresh(named, learning_rate=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)
    weights = (train_config.node_loss_weight, train_config.edge_loss_weight)

    # topology depends only on connectivity, which augmentation never changes
    train_topos = [build_topology(g) for g in train_graphs]
    val_topos = [build_topology(g) for g in val_graphs]
    train_targets = [(node_labels(g), edge_labels(g)) for g in train_graphs]

    log = []
    best_metric = -1.0
    best_epoch = -1
    best_params = params.copy()

    for epoch in range(train_config.epochs):
        order = rng.permutation(len(train_graphs))
        if train_config.augment:
            seeds = rng.integers(0, 2 ** 62, size=len(train_graphs))
            epoch_graphs = [augment_translate(g, int(s), train_config.max_translate)
                            for g, s in zip(train_graphs, seeds)]
        else:
            epoch_graphs = list(train_graphs)

        epoch_losses = []
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            batch_grads = None
            batch_loss = 0.0
            for gi in batch:
                g = epoch_graphs[gi]
                feats = (model_node_features(g), model_edge_features(g))
                loss, grads = _graph_gradients(feats, train_topos[gi],
                                               train_targets[gi], params,
                                               model_config, weights)
                batch_loss += loss
                if batch_grads is None:
                    batch_grads = grads
                else:
                    for name in batch_grads:
                        batch_grads[name] += grads[name]
            scale = 1.0 / len(batch)
            batch_loss *= scale
            if not np.isfinite(batch_loss):
                raise RuntimeError(
                    f"non-finite loss {batch_loss!r} at epoch {epoch}, "
                    f"batch starting at index {start}")
            for name in batch_grads:
                batch_grads[name] *= scale
            named = adam_step(named, batch_grads, state)
            params = params.with_values(named)
            epoch_losses.append(batch_loss)

        val_acc = evaluate_node_accuracy(val_graphs, params, model_config, val_topos)
        train_acc = evaluate_node_accuracy(train_graphs, params, model_config, train_topos)
        train_loss = float(np.mean(epoch_losses))
        log.append({"epoch": epoch, "train_loss": train_loss,
                    "train_node_acc": train_acc, "val_node_acc": val_acc})
        if val_acc > best_metric:
            best_metric = val_acc
            best_epoch = epoch
            best_params = params.copy()

    return best_params, {"log": log, "best_epoch": best_epoch,
                         "best_val_node_acc": best_metric}
