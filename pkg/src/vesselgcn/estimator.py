"""Scikit-learn style estimator wrapping the model and training loop."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ValidationError
from .evaluation import GraphPrediction, PredictionSet, node_accuracy
from .graph import VesselGraph, node_labels, edge_labels
from .model import ModelConfig, predict_graph
from .training import TrainConfig, train


class VesselGraphLabeler(BaseEstimator):
    """Labels nodes and edges of vascular graphs with a fused GCN.

    fit() trains on a list of labeled VesselGraph instances; predict()
    returns (node_classes, edge_classes) arrays per graph.
    """

    def __init__(self, encoder_depth=2, core_depth=2, decoder_depth=2,
                 hidden_width=32, pool_kernel=2, message_passing_rounds=10,
                 pooling_enabled=True, edge_class_count=8,
                 learning_rate=0.001, batch_size=32, epochs=100,
                 augment=True, seed=0):
        self.encoder_depth = encoder_depth
        self.core_depth = core_depth
        self.decoder_depth = decoder_depth
        self.hidden_width = hidden_width
        self.pool_kernel = pool_kernel
        self.message_passing_rounds = message_passing_rounds
        self.pooling_enabled = pooling_enabled
        self.edge_class_count = edge_class_count
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.augment = augment
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder_depth=self.encoder_depth, core_depth=self.core_depth,
            decoder_depth=self.decoder_depth, hidden_width=self.hidden_width,
            pool_kernel=self.pool_kernel,
            message_passing_rounds=self.message_passing_rounds,
            pooling_enabled=self.pooling_enabled,
            edge_class_count=self.edge_class_count, seed=self.seed)

    def fit(self, X: Sequence[VesselGraph], y=None,
            validation: Optional[Sequence[VesselGraph]] = None):
        """Train on labeled graphs; labels live on the graphs, so y is unused."""
        if validation is None:
            validation = X
        train_config = TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, augment=self.augment,
            seed=self.seed)
        self.params_, self.history_ = train(list(X), list(validation),
                                            self._model_config(), train_config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("VesselGraphLabeler is not fitted; call fit() first")

    def predict(self, X):
        """Per graph, the (node_classes, edge_classes) argmax predictions."""
        self._check_fitted()
        single = isinstance(X, VesselGraph)
        graphs = [X] if single else list(X)
        config = self._model_config()
        out = [predict_graph(g, self.params_, config) for g in graphs]
        return out[0] if single else out

    def score(self, X, y=None) -> float:
        """Micro node accuracy against the labels stored on the graphs."""
        self._check_fitted()
        preds = []
        for graph, (node_pred, edge_pred) in zip(X, self.predict(X)):
            preds.append(GraphPrediction(
                node_pred=node_pred, node_true=node_labels(graph),
                edge_pred=edge_pred, edge_true=edge_labels(graph),
                scan_id=graph.scan_id))
        return node_accuracy(PredictionSet(tuple(preds)))
