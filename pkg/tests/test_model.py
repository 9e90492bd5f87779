import numpy as np
import pytest
from scipy.special import expit

from vesselgcn.autodiff import Tape
from vesselgcn.errors import ShapeError, ValidationError
from vesselgcn.graph import (NODE_CLASS_COUNT, EdgeRecord, VesselGraph,
                             build_topology, node_feature_matrix)
from vesselgcn.model import (ModelConfig, TapedModel, _layer_shapes,
                             check_model_gradients, checkpoint_to_json,
                             init_params, load_checkpoint, model_edge_features,
                             model_forward, model_node_features, predict_graph,
                             save_checkpoint)
from vesselgcn.synth import random_graph


SMALL = ModelConfig(encoder_depth=1, core_depth=1, decoder_depth=1,
                    hidden_width=4, message_passing_rounds=2, edge_class_count=4)


def forward_logits(graph, params, config, diag=None):
    topo = build_topology(graph)
    tape = Tape(record=False)
    return model_forward(topo, model_node_features(graph),
                         model_edge_features(graph), params, config, tape, diag)


class TestLayerOracle:
    def test_single_layer_matches_dense_formula(self):
        rng = np.random.default_rng(3)
        graph = random_graph(seed=3, n_nodes=6, extra_edges=1)
        topo = build_topology(graph)
        n, m = 6, 6
        x_node = rng.normal(size=(n, 5))
        x_edge = rng.normal(size=(m, 3))
        w_edge = rng.normal(size=(3, 4))
        w_node = rng.normal(size=(5 + 4, 4))

        config = ModelConfig()
        params = init_params(config, rng_seed=0)
        tape = Tape(record=False)
        model = TapedModel(tape, params, config, topo)

        class FakeLayer:
            W_edge = tape.constant(w_edge)
            W_node = tape.constant(w_node)

        out_node, out_edge = model.gcn_layer(tape.constant(x_node),
                                             tape.constant(x_edge), FakeLayer())

        expected_edge = expit(topo.edge_adjacency @ x_edge @ w_edge)
        agg = 0.5 * (topo.incidence_in + topo.incidence_out) @ expected_edge
        expected_node = expit(
            topo.node_adjacency @ np.concatenate([x_node, agg], axis=1) @ w_node)
        assert np.max(np.abs(out_edge.value - expected_edge)) < 1e-12
        assert np.max(np.abs(out_node.value - expected_node)) < 1e-12


class TestWidths:
    def test_fused_width_pooled(self):
        assert ModelConfig().fused_width == 32

    def test_fused_width_unpooled(self):
        assert ModelConfig(pooling_enabled=False).fused_width == 64

    def test_fused_width_odd_hidden_rounds_up(self):
        assert ModelConfig(hidden_width=5, pool_kernel=2).fused_width == 2 * 3

    def test_encoder_output_width_matches_config(self):
        for config in (ModelConfig(), ModelConfig(pooling_enabled=False)):
            graph = random_graph(seed=1, n_nodes=5, extra_edges=0)
            topo = build_topology(graph)
            tape = Tape(record=False)
            model = TapedModel(tape, init_params(config, 0), config, topo)
            enc_node, enc_edge = model.encoder_forward(
                tape.constant(model_node_features(graph)),
                tape.constant(model_edge_features(graph)))
            assert enc_node.value.shape == (5, config.fused_width)
            assert enc_edge.value.shape == (4, config.fused_width)

    def test_logit_shapes(self):
        graph = random_graph(seed=2, n_nodes=7, extra_edges=2)
        params = init_params(SMALL, rng_seed=0)
        node_logits, edge_logits = forward_logits(graph, params, SMALL)
        assert node_logits.value.shape == (7, NODE_CLASS_COUNT)
        assert edge_logits.value.shape == (8, SMALL.edge_class_count)

    def test_core_projection_layer_closes_width(self):
        config = ModelConfig()
        _, core, _, _, _ = _layer_shapes(config)
        assert core[-1][0] == (config.core_depth * config.hidden_width, config.fused_width)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            ModelConfig(encoder_depth=0)
        with pytest.raises(ValidationError):
            ModelConfig(message_passing_rounds=0)


class TestForward:
    def test_core_round_counter(self):
        graph = random_graph(seed=4, n_nodes=5, extra_edges=0)
        params = init_params(SMALL, rng_seed=0)
        diag = {}
        forward_logits(graph, params, SMALL, diag)
        assert diag["core_rounds"] == SMALL.message_passing_rounds

    def test_forward_deterministic(self):
        graph = random_graph(seed=5, n_nodes=6, extra_edges=1)
        params = init_params(SMALL, rng_seed=0)
        a = forward_logits(graph, params, SMALL)[0].value
        b = forward_logits(graph, params, SMALL)[0].value
        assert np.array_equal(a, b)

    def test_permutation_equivariance_small(self):
        graph = random_graph(seed=6, n_nodes=8, extra_edges=2)
        params = init_params(SMALL, rng_seed=0)
        node_logits, edge_logits = forward_logits(graph, params, SMALL)

        rng = np.random.default_rng(0)
        perm = rng.permutation(len(graph.nodes))
        inv = np.argsort(perm)
        nodes = tuple(graph.nodes[perm[i]] for i in range(len(graph.nodes)))
        edges = tuple(EdgeRecord(sender=int(inv[e.sender]), receiver=int(inv[e.receiver]),
                                 direction=e.direction, distance=e.distance,
                                 mean_radius=e.mean_radius, label=e.label)
                      for e in graph.edges)
        permuted = VesselGraph(nodes=nodes, edges=edges, scan_id=graph.scan_id)
        p_node, p_edge = forward_logits(permuted, params, SMALL)

        assert np.max(np.abs(p_node.value - node_logits.value[perm])) < 1e-9
        assert np.max(np.abs(p_edge.value - edge_logits.value)) < 1e-9

    def test_predict_graph_argmax(self):
        graph = random_graph(seed=7, n_nodes=6, extra_edges=1)
        params = init_params(SMALL, rng_seed=0)
        node_logits, edge_logits = forward_logits(graph, params, SMALL)
        node_pred, edge_pred = predict_graph(graph, params, SMALL)
        np.testing.assert_array_equal(node_pred, np.argmax(node_logits.value, axis=1))
        np.testing.assert_array_equal(edge_pred, np.argmax(edge_logits.value, axis=1))


class TestInit:
    def test_deterministic_per_seed(self):
        a = init_params(SMALL, rng_seed=11).named()
        b = init_params(SMALL, rng_seed=11).named()
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_seed_changes_values(self):
        a = init_params(SMALL, rng_seed=0).named()
        b = init_params(SMALL, rng_seed=1).named()
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_glorot_bounds(self):
        params = init_params(ModelConfig(), rng_seed=0)
        for value in params.named().values():
            limit = np.sqrt(6.0 / (value.shape[0] + value.shape[1]))
            assert np.all(np.abs(value) <= limit)

    def test_with_values_round_trip(self):
        params = init_params(SMALL, rng_seed=0)
        rebuilt = params.with_values(params.named())
        for name, value in params.named().items():
            assert np.array_equal(rebuilt.named()[name], value)


class TestFeatureScaling:
    def test_raw_graph_features_untouched(self):
        graph = random_graph(seed=8, n_nodes=5, extra_edges=0)
        raw = node_feature_matrix(graph)
        model_node_features(graph)
        np.testing.assert_array_equal(node_feature_matrix(graph), raw)

    def test_position_centering(self):
        graph = random_graph(seed=8, n_nodes=5, extra_edges=0)
        raw = node_feature_matrix(graph)
        scaled = model_node_features(graph)
        np.testing.assert_allclose(scaled[:, 0:3], (raw[:, 0:3] - 0.5) * 4.0)
        np.testing.assert_allclose(scaled[:, 3], raw[:, 3] * 20.0)
        np.testing.assert_array_equal(scaled[:, 4:], raw[:, 4:])


class TestGradientCheck:
    def test_small_model_matches_finite_difference(self):
        graph = random_graph(seed=9, n_nodes=5, extra_edges=1, edge_class_count=4)
        config = ModelConfig(encoder_depth=1, core_depth=1, decoder_depth=1,
                             hidden_width=3, message_passing_rounds=2,
                             edge_class_count=4)
        errors = check_model_gradients(graph, init_params(config, 0), config)
        assert max(errors.values()) < 1e-5


class TestCheckpoints:
    def test_round_trip_exact_and_byte_identical(self, tmp_path):
        params = init_params(SMALL, rng_seed=3)
        p = tmp_path / "ckpt.json"
        save_checkpoint(p, params, SMALL)
        first = p.read_bytes()
        loaded, config = load_checkpoint(p)
        assert config == SMALL
        for name, value in params.named().items():
            assert np.array_equal(loaded.named()[name], value)
        save_checkpoint(p, loaded, config)
        assert p.read_bytes() == first

    def test_rejects_unknown_format_version(self, tmp_path):
        import json
        params = init_params(SMALL, rng_seed=0)
        doc = json.loads(checkpoint_to_json(params, SMALL))
        doc["format_version"] = 99
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="version"):
            load_checkpoint(p)

    def test_rejects_missing_parameter(self, tmp_path):
        import json
        params = init_params(SMALL, rng_seed=0)
        doc = json.loads(checkpoint_to_json(params, SMALL))
        del doc["params"]["node_head"]
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="mismatch"):
            load_checkpoint(p)

    def test_rejects_shape_mismatch(self, tmp_path):
        import json
        params = init_params(SMALL, rng_seed=0)
        doc = json.loads(checkpoint_to_json(params, SMALL))
        entry = doc["params"]["node_head"]
        entry["shape"] = [1, len(entry["data"])]
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ShapeError):
            load_checkpoint(p)
