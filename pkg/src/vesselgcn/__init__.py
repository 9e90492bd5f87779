"""Graph convolutional network with deep feature fusion for vascular graph labeling."""

from .errors import ShapeError, ValidationError
from .graph import (EdgeRecord, GraphTopology, NodeRecord, VesselGraph,
                    augment_translate, build_topology, load_graph,
                    normalize_adjacency, normalize_positions, save_graph)
from .autodiff import Tape, finite_difference_gradient
from .model import (ModelConfig, ModelParams, check_model_gradients,
                    init_params, load_checkpoint, model_forward,
                    predict_graph, save_checkpoint)
from .training import AdamState, TrainConfig, adam_step, train
from .evaluation import (GraphPrediction, MetricsReport, PredictionSet,
                         compute_metrics)
from .synth import Dataset, SynthConfig, generate_synthetic, load_manifest
from .estimator import VesselGraphLabeler

__all__ = [
    "AdamState", "Dataset", "EdgeRecord", "GraphPrediction", "GraphTopology",
    "MetricsReport", "ModelConfig", "ModelParams", "NodeRecord",
    "PredictionSet", "ShapeError", "SynthConfig", "Tape", "TrainConfig",
    "ValidationError", "VesselGraph", "VesselGraphLabeler", "adam_step",
    "augment_translate", "build_topology", "check_model_gradients",
    "compute_metrics", "finite_difference_gradient", "generate_synthetic",
    "init_params", "load_checkpoint", "load_graph", "load_manifest",
    "model_forward", "normalize_adjacency", "normalize_positions",
    "predict_graph", "save_checkpoint", "save_graph", "train",
]

__version__ = "0.1.0"
