import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from narrowcap.errors import NetworkFormatError, UnboundedLipschitz
from narrowcap.network import (
    Activation,
    Layer,
    Network,
    compose,
    deserialize,
    forward,
    forward_prefix,
    interval_bounds,
    lipschitz_bound,
    serialize,
)
from narrowcap.testing import random_narrow_network
from narrowcap.verifier import example1_networks


def _scalar_act(kind, alpha, t):
    if kind == "relu":
        return t if t > 0 else 0.0
    if kind == "leaky_relu":
        return t if t >= 0 else alpha * t
    if kind == "tanh":
        return math.tanh(t)
    if kind == "sigmoid":
        return 1.0 / (1.0 + math.exp(-t))
    if kind == "cosine":
        return math.cos(t)
    if kind == "step":
        return 1.0 if t >= 0 else 0.0
    return t


def straight_line_eval(net, x):
    """Loop-only evaluator sharing no code with Network.forward."""
    h = [float(v) for v in x]
    for layer in net.hidden_layers:
        W, b, act = layer.weights.tolist(), layer.bias.tolist(), layer.activation
        h = [_scalar_act(act.kind, act.alpha, sum(w * v for w, v in zip(row, h)) + bi)
             for row, bi in zip(W, b)]
    return [sum(w * v for w, v in zip(row, h)) + bi
            for row, bi in zip(net.final_weights.tolist(), net.final_bias.tolist())]


def _random_net(rng, dim_in, widths, dim_out, act="relu"):
    layers, prev = [], dim_in
    for w in widths:
        layers.append(Layer(rng.normal(size=(w, prev)), rng.normal(size=w), Activation(act)))
        prev = w
    return Network(layers, rng.normal(size=(dim_out, prev)), rng.normal(size=dim_out))


class TestActivation:
    def test_step_is_exact(self):
        np.testing.assert_array_equal(Activation("step")([-1e-300, 0.0, 2.0]), [0.0, 1.0, 1.0])

    def test_leaky_needs_positive_alpha(self):
        with pytest.raises(ValueError):
            Activation("leaky_relu", 0.0)
        with pytest.raises(ValueError):
            Activation("leaky_relu")

    def test_monotone_flags(self):
        assert not Activation("cosine").monotone
        for k in ("relu", "tanh", "sigmoid", "identity", "step"):
            assert Activation(k).monotone

    def test_step_has_no_lipschitz_constant(self):
        with pytest.raises(UnboundedLipschitz):
            Activation("step").lipschitz

    def test_sigmoid_matches_logistic(self):
        z = np.linspace(-30, 30, 101)
        np.testing.assert_allclose(Activation("sigmoid")(z), 1.0 / (1.0 + np.exp(-z)), rtol=1e-14)

    def test_relu_subgradient_at_zero(self):
        assert Activation("relu").derivative(0.0) == 0.0

    @given(st.floats(-20, 20), st.floats(0, 10))
    def test_cosine_interval_is_exact_range(self, lo, span):
        hi = lo + span
        a, b = Activation("cosine").interval(np.array(lo), np.array(hi))
        t = np.linspace(lo, hi, 20001)
        c = np.cos(t)
        # bounds enclose the range, and match it up to grid resolution
        assert a <= c.min() + 1e-12 and b >= c.max() - 1e-12
        assert a >= c.min() - 1e-6 and b <= c.max() + 1e-6


class TestForward:
    def test_example1(self):
        g1, _ = example1_networks()
        np.testing.assert_array_equal(g1.forward([[0.0], [2.0]])[:, 0], [1.0, 0.0])

    def test_identity_layer(self, rng):
        net = Network([Layer(np.eye(3), np.zeros(3), Activation("identity"))], np.eye(3), np.zeros(3))
        x = rng.normal(size=3)
        np.testing.assert_array_equal(net.forward(x), x)

    def test_matches_straight_line_evaluator(self, rng):
        net = _random_net(rng, 2, [2, 2, 2], 1)
        X = rng.normal(size=(100, 2))
        expected = np.array([straight_line_eval(net, x) for x in X])
        np.testing.assert_allclose(net.forward(X), expected, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("act", ["tanh", "sigmoid", "cosine", "leaky_relu", "step"])
    def test_other_activations_match_oracle(self, rng, act):
        a = Activation(act, 0.2) if act == "leaky_relu" else Activation(act)
        layers = [Layer(rng.normal(size=(3, 3)), rng.normal(size=3), a) for _ in range(2)]
        net = Network(layers, rng.normal(size=(1, 3)), [0.1])
        X = rng.normal(size=(20, 3))
        expected = np.array([straight_line_eval(net, x) for x in X])
        np.testing.assert_allclose(net.forward(X), expected, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            Network.identity(2).forward([1.0, 2.0, 3.0])

    def test_layer_chain_checked(self):
        with pytest.raises(ValueError):
            Network([Layer(np.ones((2, 3)), np.zeros(2))], np.ones((1, 3)), [0.0])

    def test_width_and_depth(self, rng):
        net = _random_net(rng, 3, [2, 3, 1], 2)
        assert net.depth == 4
        assert net.widths == [2, 3, 1, 2]
        assert net.width == 3

    def test_module_function(self, rng):
        net = _random_net(rng, 2, [2], 1)
        x = rng.normal(size=2)
        np.testing.assert_array_equal(forward(net, x), net.forward(x))


class TestForwardPrefix:
    def test_first_prefix_is_affine(self, rng):
        net = _random_net(rng, 2, [2, 2], 1)
        x = rng.normal(size=2)
        l1 = net.hidden_layers[0]
        np.testing.assert_allclose(forward_prefix(net, 1, x), l1.weights @ x + l1.bias, rtol=1e-14)

    def test_recursion(self, rng):
        net = _random_net(rng, 2, [2, 2, 2], 1)
        X = rng.normal(size=(30, 2))
        l2 = net.hidden_layers[1]
        step = l2.weights @ np.maximum(net.forward_prefix(1, X), 0).T
        np.testing.assert_allclose(step.T + l2.bias, net.forward_prefix(2, X), rtol=1e-13, atol=1e-13)

    def test_last_prefix_reconstructs_forward(self, rng):
        net = _random_net(rng, 3, [3, 2, 3], 2, act="tanh")
        X = rng.normal(size=(30, 3))
        z = net.forward_prefix(net.depth - 1, X)
        out = np.tanh(z) @ net.final_weights.T + net.final_bias
        np.testing.assert_allclose(out, net.forward(X), rtol=1e-13, atol=1e-13)

    @pytest.mark.parametrize("k", [0, 4])
    def test_out_of_range(self, rng, k):
        net = _random_net(rng, 2, [2, 2], 1)
        with pytest.raises(ValueError):
            net.forward_prefix(k, [0.0, 0.0])

    def test_trace_labels(self, rng):
        net = _random_net(rng, 2, [2, 2], 1)
        labels = [s for s, _ in net.trace(np.zeros((1, 2)))]
        assert labels == ["input", "affine1", "relu1", "affine2", "relu2", "final affine"]


class TestCompose:
    def test_affine_outer_keeps_hidden_count(self, rng):
        inner = _random_net(rng, 2, [2, 2], 2)
        outer = Network.affine(rng.normal(size=(1, 2)), [0.5])
        assert len(compose(outer, inner).hidden_layers) == 2

    def test_depth_four_form(self, rng):
        # one hidden layer, then a depth-3 map, then a scalar readout
        f1 = _random_net(rng, 2, [2], 2)
        f2 = _random_net(rng, 2, [2, 2], 2)
        readout = Network.affine(rng.normal(size=(1, 2)), [0.3])
        net = compose(readout, compose(f2, f1))
        assert net.depth == 4
        assert [l.activation.kind for l in net.hidden_layers] == ["relu"] * 3
        X = rng.normal(size=(50, 2))
        np.testing.assert_allclose(net.forward(X), readout.forward(f2.forward(f1.forward(X))),
                                   rtol=1e-9, atol=1e-9)

    def test_mismatch(self, rng):
        with pytest.raises(ValueError):
            compose(_random_net(rng, 3, [2], 1), _random_net(rng, 2, [2], 2))

    @given(st.integers(0, 10_000))
    def test_sequential_equivalence(self, seed):
        r = np.random.default_rng(seed)
        d = int(r.integers(1, 4))
        inner = _random_net(r, d, list(r.integers(1, 4, size=r.integers(0, 3))), int(r.integers(1, 4)))
        outer = _random_net(r, inner.output_dim, list(r.integers(1, 4, size=r.integers(0, 3))), 1)
        both = compose(outer, inner)
        X = r.normal(size=(20, d))
        np.testing.assert_allclose(both.forward(X), outer.forward(inner.forward(X)), rtol=1e-9, atol=1e-9)
        assert both.depth == inner.depth + outer.depth - 1
        boundary = outer.hidden_layers[0].width if outer.hidden_layers else outer.output_dim
        assert both.width == max(inner.widths[:-1] + outer.widths + [boundary], default=boundary)


class TestLipschitz:
    def test_affine_norm(self):
        assert lipschitz_bound(Network.affine([[3.0, 4.0]], [0.0])) == pytest.approx(5.0, rel=1e-12)

    def test_identity(self):
        assert lipschitz_bound(Network.identity(4)) == pytest.approx(1.0)

    def test_example1_sampled(self, rng):
        g1, _ = example1_networks()
        L = lipschitz_bound(g1)
        assert L >= 1.0
        x, y = rng.uniform(-3, 3, size=(2, 1000, 1))
        assert np.all(np.abs(g1.forward(x) - g1.forward(y)) <= L * np.abs(x - y) + 1e-12)

    def test_step_rejected(self):
        net = Network([Layer([[1.0]], [0.0], Activation("step"))], [[1.0]], [0.0])
        with pytest.raises(UnboundedLipschitz):
            lipschitz_bound(net)

    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_bound_holds_on_pairs(self, seed, dim):
        r = np.random.default_rng(seed)
        net = random_narrow_network(r, dim)
        L = lipschitz_bound(net)
        x, y = r.normal(size=(2, 50, dim))
        gap = np.abs(net.forward(x) - net.forward(y))[:, 0]
        assert np.all(gap <= L * np.linalg.norm(x - y, axis=1) * (1 + 1e-12) + 1e-12)

    @given(st.integers(0, 10_000), st.integers(1, 3))
    def test_interval_bounds_enclose(self, seed, dim):
        r = np.random.default_rng(seed)
        net = random_narrow_network(r, dim)
        lo = r.uniform(-1, 0, size=dim)
        hi = lo + r.uniform(0.01, 1, size=dim)
        X = r.uniform(lo, hi, size=(200, dim))
        a, b = interval_bounds(net, lo, hi)
        out = net.forward(X)[:, 0]
        assert out.min() >= a[0, 0] - 1e-12 and out.max() <= b[0, 0] + 1e-12


class TestSerialization:
    def test_example1_round_trip(self):
        g1, g2 = example1_networks()
        assert deserialize(serialize(g1)) == g1
        assert deserialize(serialize(g2)) != g1

    def test_schema_keys(self):
        doc = json.loads(serialize(example1_networks()[0]))
        assert set(doc) == {"layers", "final_w", "final_b"}
        assert set(doc["layers"][0]) == {"w", "b", "act"}
        assert doc["layers"][0]["act"] == "relu"

    def test_leaky_alpha_kept(self):
        net = Network([Layer([[1.0]], [0.0], Activation("leaky_relu", 0.3))], [[1.0]], [0.0])
        assert deserialize(serialize(net)).hidden_layers[0].activation.alpha == 0.3

    def test_plain_decimal_floats_accepted(self):
        doc = {"layers": [{"w": [[1.5]], "b": [0], "act": "relu"}], "final_w": [[2]], "final_b": [1]}
        net = deserialize(json.dumps(doc))
        assert net.forward([1.0])[0] == 4.0

    def test_shape_mismatch_reports_location(self):
        doc = {"layers": [{"w": [[1.0, 2.0]], "b": [0.0, 1.0], "act": "relu"}],
               "final_w": [[1.0]], "final_b": [0.0]}
        with pytest.raises(NetworkFormatError) as info:
            deserialize(json.dumps(doc))
        assert info.value.location == "layers[0].b"

    def test_chain_mismatch_reports_location(self):
        doc = {"layers": [{"w": [[1.0, 2.0]], "b": [0.0], "act": "relu"}],
               "final_w": [[1.0, 1.0]], "final_b": [0.0]}
        with pytest.raises(NetworkFormatError) as info:
            deserialize(json.dumps(doc))
        assert info.value.location == "final_w"

    @pytest.mark.parametrize("text", ["{", "[]", '{"layers": []}',
                                      '{"layers": [], "final_w": [[1, "x"]], "final_b": [0]}',
                                      '{"layers": [{"w": [[1]], "b": [0], "act": "swish"}], "final_w": [[1]], "final_b": [0]}'])
    def test_malformed_documents(self, text):
        with pytest.raises(NetworkFormatError):
            deserialize(text)

    def test_random_round_trip_is_bit_exact(self, rng):
        X = rng.normal(size=(10, 3))
        for _ in range(100):
            net = random_narrow_network(rng, 3)
            back = deserialize(serialize(net))
            assert back == net
            np.testing.assert_array_equal(back.forward(X), net.forward(X))
