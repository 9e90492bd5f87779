"""Encoder-core-decoder graph convolutional model with deep feature fusion.

Each graph convolutional layer updates the edge (line) graph first, then the
node graph with aggregated incident-edge features concatenated in.  Encoder
layer outputs are average-pooled along the feature axis and concatenated;
the core re-applies one weight-tied layer stack for a fixed number of
message-passing rounds, re-concatenating the encoder output each round.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Optional

import numpy as np

from .autodiff import Tape, Var
from .errors import ShapeError, ValidationError
from .graph import (EDGE_FEATURE_DIM, NODE_CLASS_COUNT, NODE_FEATURE_DIM,
                    GraphTopology, VesselGraph, build_topology,
                    edge_feature_matrix, node_feature_matrix)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    encoder_depth: int = 2
    core_depth: int = 2
    decoder_depth: int = 2
    hidden_width: int = 32
    pool_kernel: int = 2
    message_passing_rounds: int = 10
    pooling_enabled: bool = True
    edge_class_count: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.encoder_depth, self.core_depth, self.decoder_depth) < 1:
            raise ValidationError("component depths must be >= 1")
        if self.message_passing_rounds < 1:
            raise ValidationError("message_passing_rounds must be >= 1")
        if self.hidden_width < 1 or self.pool_kernel < 1:
            raise ValidationError("hidden_width and pool_kernel must be >= 1")
        if self.edge_class_count < 1:
            raise ValidationError("edge_class_count must be >= 1")

    @property
    def fused_width(self) -> int:
        """Width of the encoder's fused output (closure width of the core)."""
        if self.pooling_enabled:
            per_layer = -(-self.hidden_width // self.pool_kernel)
        else:
            per_layer = self.hidden_width
        return self.encoder_depth * per_layer


@dataclass
class LayerParams:
    W_edge: np.ndarray
    W_node: np.ndarray


@dataclass
class ModelParams:
    encoder_layers: list
    core_layers: list  # core_depth stacked layers + final projection layer
    decoder_layers: list
    node_head: np.ndarray
    edge_head: np.ndarray

    def named(self) -> Dict[str, np.ndarray]:
        out = {}
        for comp, layers in (("encoder", self.encoder_layers),
                             ("core", self.core_layers),
                             ("decoder", self.decoder_layers)):
            for i, layer in enumerate(layers):
                out[f"{comp}.{i}.W_edge"] = layer.W_edge
                out[f"{comp}.{i}.W_node"] = layer.W_node
        out["node_head"] = self.node_head
        out["edge_head"] = self.edge_head
        return out

    def with_values(self, named: Dict[str, np.ndarray]) -> "ModelParams":
        def layer(comp, i):
            return LayerParams(named[f"{comp}.{i}.W_edge"], named[f"{comp}.{i}.W_node"])
        return ModelParams(
            encoder_layers=[layer("encoder", i) for i in range(len(self.encoder_layers))],
            core_layers=[layer("core", i) for i in range(len(self.core_layers))],
            decoder_layers=[layer("decoder", i) for i in range(len(self.decoder_layers))],
            node_head=named["node_head"],
            edge_head=named["edge_head"],
        )

    def copy(self) -> "ModelParams":
        return self.with_values({k: v.copy() for k, v in self.named().items()})


def _layer_shapes(config: ModelConfig):
    """(W_edge, W_node) shapes for every layer of each component, plus heads."""
    h = config.hidden_width
    f = config.fused_width
    enc, core, dec = [], [], []
    e_in, n_in = EDGE_FEATURE_DIM, NODE_FEATURE_DIM
    for _ in range(config.encoder_depth):
        enc.append(((e_in, h), (n_in + h, h)))
        e_in, n_in = h, h
    e_in = n_in = 2 * f
    for _ in range(config.core_depth):
        core.append(((e_in, h), (n_in + h, h)))
        e_in = n_in = h
    # projection layer closing the round back to the encoder fused width
    core.append(((config.core_depth * h, f), (config.core_depth * h + f, f)))
    e_in = n_in = f
    for _ in range(config.decoder_depth):
        dec.append(((e_in, h), (n_in + h, h)))
        e_in = n_in = h
    head_in = config.decoder_depth * h
    return enc, core, dec, (head_in, NODE_CLASS_COUNT), (head_in, config.edge_class_count)


def init_params(config: ModelConfig, rng_seed: int) -> ModelParams:
    """Glorot-uniform initialization, deterministic per seed."""
    rng = np.random.default_rng(rng_seed)

    def glorot(shape):
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-limit, limit, size=shape)

    enc, core, dec, node_head, edge_head = _layer_shapes(config)
    return ModelParams(
        encoder_layers=[LayerParams(glorot(we), glorot(wn)) for we, wn in enc],
        core_layers=[LayerParams(glorot(we), glorot(wn)) for we, wn in core],
        decoder_layers=[LayerParams(glorot(we), glorot(wn)) for we, wn in dec],
        node_head=glorot(node_head),
        edge_head=glorot(edge_head),
    )


# fixed affine input scaling: positions in [0,1] and the small radius /
# distance values are mapped into the sigmoid's responsive range, which
# conditions the first convolution without touching the stored graph data
_POSITION_CENTER = 0.5
_POSITION_SCALE = 4.0
_RADIUS_SCALE = 20.0
_DISTANCE_SCALE = 5.0


def model_node_features(graph: VesselGraph) -> np.ndarray:
    x = node_feature_matrix(graph)
    x[:, 0:3] = (x[:, 0:3] - _POSITION_CENTER) * _POSITION_SCALE
    x[:, 3] *= _RADIUS_SCALE
    return x


def model_edge_features(graph: VesselGraph) -> np.ndarray:
    x = edge_feature_matrix(graph)
    x[:, 3] *= _DISTANCE_SCALE
    x[:, 4] *= _RADIUS_SCALE
    return x


class _TapedLayer:
    """A layer's weights registered as parameter leaves on one tape."""

    __slots__ = ("W_edge", "W_node")

    def __init__(self, tape: Tape, name: str, layer: LayerParams):
        self.W_edge = tape.parameter(f"{name}.W_edge", layer.W_edge)
        self.W_node = tape.parameter(f"{name}.W_node", layer.W_node)


class TapedModel:
    """One forward computation of the model on a single graph.

    Registers all weights on the tape so that tape.backward() yields a
    gradient per named parameter.
    """

    def __init__(self, tape: Tape, params: ModelParams, config: ModelConfig,
                 topology: GraphTopology):
        self.tape = tape
        self.config = config
        self.a_node = tape.constant(topology.node_adjacency)
        self.a_edge = tape.constant(topology.edge_adjacency)
        self.incidence = tape.constant(
            0.5 * (topology.incidence_in + topology.incidence_out))
        self.encoder = [_TapedLayer(tape, f"encoder.{i}", l)
                        for i, l in enumerate(params.encoder_layers)]
        self.core = [_TapedLayer(tape, f"core.{i}", l)
                     for i, l in enumerate(params.core_layers)]
        self.decoder = [_TapedLayer(tape, f"decoder.{i}", l)
                        for i, l in enumerate(params.decoder_layers)]
        self.node_head = tape.parameter("node_head", params.node_head)
        self.edge_head = tape.parameter("edge_head", params.edge_head)

    def gcn_layer(self, x_node: Var, x_edge: Var, layer: _TapedLayer):
        """Edge graph convolved first, then node graph with edge aggregation."""
        t = self.tape
        x_edge_new = t.sigmoid(t.matmul(self.a_edge, t.matmul(x_edge, layer.W_edge)))
        agg = t.matmul(self.incidence, x_edge_new)
        x_node_aug = t.concat_cols([x_node, agg])
        x_node_new = t.sigmoid(t.matmul(self.a_node, t.matmul(x_node_aug, layer.W_node)))
        return x_node_new, x_edge_new

    def _stack(self, layers, x_node: Var, x_edge: Var):
        node_outs, edge_outs = [], []
        for layer in layers:
            x_node, x_edge = self.gcn_layer(x_node, x_edge, layer)
            node_outs.append(x_node)
            edge_outs.append(x_edge)
        return node_outs, edge_outs

    def encoder_forward(self, x_node: Var, x_edge: Var):
        t = self.tape
        node_outs, edge_outs = self._stack(self.encoder, x_node, x_edge)
        if self.config.pooling_enabled:
            k = self.config.pool_kernel
            node_outs = [t.avgpool_cols(x, k) for x in node_outs]
            edge_outs = [t.avgpool_cols(x, k) for x in edge_outs]
        return t.concat_cols(node_outs), t.concat_cols(edge_outs)

    def core_forward(self, enc_node: Var, enc_edge: Var, diag: Optional[dict] = None):
        t = self.tape
        prev_node, prev_edge = enc_node, enc_edge
        rounds = 0
        for _ in range(self.config.message_passing_rounds):
            x_node = t.concat_cols([enc_node, prev_node])
            x_edge = t.concat_cols([enc_edge, prev_edge])
            node_outs, edge_outs = self._stack(self.core[:-1], x_node, x_edge)
            fused_node = t.concat_cols(node_outs)
            fused_edge = t.concat_cols(edge_outs)
            prev_node, prev_edge = self.gcn_layer(fused_node, fused_edge, self.core[-1])
            rounds += 1
        if diag is not None:
            diag["core_rounds"] = rounds
        return prev_node, prev_edge

    def decoder_forward(self, x_node: Var, x_edge: Var):
        t = self.tape
        node_outs, edge_outs = self._stack(self.decoder, x_node, x_edge)
        return t.concat_cols(node_outs), t.concat_cols(edge_outs)

    def forward(self, node_features: np.ndarray, edge_features: np.ndarray,
                diag: Optional[dict] = None):
        t = self.tape
        x_node = t.constant(node_features)
        x_edge = t.constant(edge_features)
        enc_node, enc_edge = self.encoder_forward(x_node, x_edge)
        core_node, core_edge = self.core_forward(enc_node, enc_edge, diag)
        dec_node, dec_edge = self.decoder_forward(core_node, core_edge)
        node_logits = t.matmul(dec_node, self.node_head)
        edge_logits = t.matmul(dec_edge, self.edge_head)
        return node_logits, edge_logits


def model_forward(topology: GraphTopology, node_features: np.ndarray,
                  edge_features: np.ndarray, params: ModelParams,
                  config: ModelConfig, tape: Tape,
                  diag: Optional[dict] = None):
    """Full forward pass; returns (node_logits, edge_logits) tape variables."""
    return TapedModel(tape, params, config, topology).forward(
        node_features, edge_features, diag)


def predict_graph(graph: VesselGraph, params: ModelParams, config: ModelConfig,
                  topology: Optional[GraphTopology] = None):
    """Argmax class predictions; ties break toward the lowest class index."""
    if topology is None:
        topology = build_topology(graph)
    tape = Tape(record=False)
    node_logits, edge_logits = model_forward(
        topology, model_node_features(graph), model_edge_features(graph),
        params, config, tape)
    node_pred = np.argmax(node_logits.value, axis=1)
    if edge_logits.value.shape[0]:
        edge_pred = np.argmax(edge_logits.value, axis=1)
    else:
        edge_pred = np.zeros(0, dtype=np.int64)
    return node_pred, edge_pred


def check_model_gradients(graph: VesselGraph, params: ModelParams,
                          config: ModelConfig, h: float = 1e-6):
    """Worst relative error per parameter of backward() vs finite differences.

    The loss is the combined node+edge cross-entropy on the graph's labels;
    errors are denominated by max(1, |analytic gradient|).
    """
    from .autodiff import finite_difference_gradient, gradient_relative_error
    from .graph import edge_labels, node_labels

    topology = build_topology(graph)
    node_feats = model_node_features(graph)
    edge_feats = model_edge_features(graph)
    node_t = node_labels(graph)
    edge_t = edge_labels(graph)

    def loss_of(p: ModelParams, tape: Tape) -> Var:
        node_logits, edge_logits = model_forward(
            topology, node_feats, edge_feats, p, config, tape)
        node_ce = tape.softmax_cross_entropy(node_logits, node_t)
        if edge_logits.value.shape[0]:
            return tape.add(node_ce, tape.softmax_cross_entropy(edge_logits, edge_t))
        return node_ce

    tape = Tape()
    analytic = tape.backward(loss_of(params, tape))

    def f(named):
        return float(loss_of(params.with_values(named), Tape(record=False)).value)

    numeric = finite_difference_gradient(f, params.named(), h=h)
    return gradient_relative_error(analytic, numeric)


# --- checkpoint serialization --------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def checkpoint_to_json(params: ModelParams, config: ModelConfig) -> str:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(config),
        "params": {
            name: {"shape": list(value.shape),
                   "data": [_fmt(v) for v in value.reshape(-1)]}
            for name, value in params.named().items()
        },
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_to_json(params, config))


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported checkpoint format version {doc.get('format_version')!r}")
    config = ModelConfig(**doc["config"])
    named = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        data = np.array([float(v) for v in entry["data"]], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ValidationError(f"{path}: parameter {name!r} data does not match shape {shape}")
        named[name] = data.reshape(shape)
    template = init_params(config, rng_seed=0)
    expected = set(template.named())
    if expected != set(named):
        missing = expected - set(named)
        extra = set(named) - expected
        raise ValidationError(f"{path}: parameter names mismatch (missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)})")
    for name, value in template.named().items():
        if value.shape != named[name].shape:
            raise ShapeError(f"{path}: parameter {name!r} has shape {named[name].shape}, "
                             f"expected {value.shape}")
    return template.with_values(named), config
