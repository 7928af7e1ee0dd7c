"""
DMPINN Architecture Unit Tests
==============================

Technical Focus:
- Parameter counts and parity between matched architectures
- Xavier-normal initialization and determinism
- Forward pass against straight-line numpy reimplementations
- Forward-propagated input derivatives against finite differences
- Parameter gradients of derivative-based losses against finite differences in θ
- Input normalization and its chain-rule factors
"""

import math

import numpy as np
import pytest

try:
    from dmpinn.architectures import (
        NetworkParams, TapedNetwork, chain_factor, forward, forward_with_derivatives,
        init_network, normalize_inputs, param_count
    )
    from dmpinn.models import (
        ArchitectureKind, ConfigurationError, DivergenceError, ManifestMismatchError, NetworkConfig
    )
    from dmpinn.problems import problem_presets
    from dmpinn.sampling import DomainBounds
except ImportError as e:
    pytest.skip(f"DMPINN architectures module unavailable: {e}", allow_module_level=True)

from tests.conftest import ALL_KINDS


def _randomized(config: NetworkConfig, seed: int) -> NetworkParams:
    """Xavier weights plus non-zero biases so every path is exercised."""
    params = init_network(config, seed)
    rng = np.random.default_rng(seed + 1000)
    return params.replace({
        name: 0.3 * rng.standard_normal(array.shape)
        for name, array in params.named_arrays().items() if name.startswith("b")
    })


def _naive_forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Straight-line numpy evaluation of every architecture."""
    config = params.config
    weights, biases = params.weights, params.biases
    depth = config.hidden_layers

    def dense(k: int, h: np.ndarray) -> np.ndarray:
        return np.tanh(h @ weights[k].T + biases[k])

    if config.kind is ArchitectureKind.MODIFIED_MLP:
        (wu, bu), (wv, bv) = params.encoders
        u = np.tanh(x @ wu.T + bu)
        v = np.tanh(x @ wv.T + bv)
        h = x
        for k in range(depth):
            h = u + dense(k, h) * (v - u)
        return h @ weights[depth].T + biases[depth]

    h = dense(0, x)
    hidden, activations = [h], [h]
    running = None
    for k in range(1, depth):
        a = dense(k, h)
        basis = hidden if config.dm_multiplier == "hidden" else activations
        if config.kind is ArchitectureKind.VANILLA:
            h = a
        elif config.kind is ArchitectureKind.RESNET:
            h = h + a
        elif config.kind is ArchitectureKind.DM:
            running = basis[k - 1] if running is None else running * basis[k - 1]
            h = a * running
        else:
            members = [basis[i - 1] for i in range(k, 0, -config.skip_stride)]
            product = members[0]
            for member in members[1:]:
                product = product * member
            h = h + a * product
        hidden.append(h)
        activations.append(a)
    return h @ weights[depth].T + biases[depth]


class TestParameterCounts:

    @pytest.mark.unit
    def test_vanilla_count_closed_form(self):
        config = NetworkConfig(kind=ArchitectureKind.VANILLA, input_dim=2, hidden_layers=4, width=128)
        assert param_count(config) == 50049

    @pytest.mark.unit
    def test_dm_adds_no_parameters(self):
        config = NetworkConfig(kind=ArchitectureKind.DM, input_dim=2, hidden_layers=4, width=128)
        assert param_count(config) == 50049

    @pytest.mark.unit
    def test_modified_mlp_adds_two_encoders(self):
        config = NetworkConfig(kind=ArchitectureKind.MODIFIED_MLP, input_dim=2, hidden_layers=4, width=128)
        assert param_count(config) == 50049 + 2 * (2 + 1) * 128

    @pytest.mark.unit
    @pytest.mark.parametrize("problem", list(problem_presets().values()), ids=lambda p: p.name.value)
    def test_parity_on_every_preset(self, problem):
        counts = {kind: param_count(problem.network_config(kind)) for kind in ALL_KINDS}
        assert counts[ArchitectureKind.DM] == counts[ArchitectureKind.VANILLA]
        assert counts[ArchitectureKind.SDM] == counts[ArchitectureKind.RESNET]

    @pytest.mark.unit
    def test_count_matches_manifest(self, tiny_network):
        for kind in ALL_KINDS:
            params = init_network(tiny_network(kind), 0)
            assert param_count(params.config) == sum(a.size for a in params.named_arrays().values())


class TestInitialization:

    @pytest.mark.unit
    def test_layer_shapes_for_allen_cahn_width(self):
        config = NetworkConfig(kind=ArchitectureKind.VANILLA, input_dim=2, hidden_layers=4, width=128)
        params = init_network(config, 0)
        assert [w.shape for w in params.weights] == [(128, 2), (128, 128), (128, 128), (128, 128), (1, 128)]
        assert all(not b.any() for b in params.biases)

    @pytest.mark.unit
    def test_same_seed_is_bitwise_identical(self, tiny_network):
        for kind in ALL_KINDS:
            first = init_network(tiny_network(kind), 7).named_arrays()
            second = init_network(tiny_network(kind), 7).named_arrays()
            assert all(np.array_equal(first[name], second[name]) for name in first)

    @pytest.mark.unit
    def test_different_seeds_differ(self, tiny_network):
        first = init_network(tiny_network(ArchitectureKind.DM), 0)
        second = init_network(tiny_network(ArchitectureKind.DM), 1)
        assert not np.array_equal(first.weights[0], second.weights[0])

    @pytest.mark.unit
    def test_xavier_variance(self):
        config = NetworkConfig(kind=ArchitectureKind.VANILLA, input_dim=128, hidden_layers=7, width=128)
        params = init_network(config, 3)
        samples = np.concatenate([w.reshape(-1) for w in params.weights[:7]])
        assert samples.size > 100000
        assert np.var(samples) == pytest.approx(2.0 / 256.0, rel=0.05)

    @pytest.mark.unit
    def test_matched_kinds_share_dense_weights(self, tiny_network):
        vanilla = init_network(tiny_network(ArchitectureKind.VANILLA), 5)
        dm = init_network(tiny_network(ArchitectureKind.DM), 5)
        mlp = init_network(tiny_network(ArchitectureKind.MODIFIED_MLP), 5)
        for a, b, c in zip(vanilla.weights, dm.weights, mlp.weights):
            assert np.array_equal(a, b)
            assert np.array_equal(a, c)


class TestNetworkParams:

    @pytest.mark.unit
    def test_named_arrays_order(self, tiny_network):
        params = init_network(tiny_network(ArchitectureKind.MODIFIED_MLP, hidden_layers=2), 0)
        assert list(params.named_arrays()) == ["W1", "b1", "W2", "b2", "W3", "b3", "Wu", "bu", "Wv", "bv"]

    @pytest.mark.unit
    def test_from_named_rejects_wrong_shapes(self, tiny_network):
        params = init_network(tiny_network(ArchitectureKind.VANILLA), 0)
        arrays = dict(params.named_arrays())
        arrays["W2"] = np.zeros((3, 3))
        with pytest.raises(ManifestMismatchError) as info:
            NetworkParams.from_named(params.config, arrays)
        assert info.value.expected["W2"] == (4, 4)
        assert info.value.found["W2"] == (3, 3)

    @pytest.mark.unit
    def test_from_named_rejects_missing_arrays(self, tiny_network):
        params = init_network(tiny_network(ArchitectureKind.MODIFIED_MLP), 0)
        arrays = {k: v for k, v in params.named_arrays().items() if k != "Wv"}
        with pytest.raises(ManifestMismatchError):
            NetworkParams.from_named(params.config, arrays)


class TestForward:

    @pytest.mark.unit
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    @pytest.mark.parametrize("multiplier", ["hidden", "activation"])
    def test_matches_straight_line_reimplementation(self, kind, multiplier, rng):
        config = NetworkConfig(kind=kind, input_dim=2, hidden_layers=3, width=4, dm_multiplier=multiplier)
        params = _randomized(config, 11)
        x = rng.uniform(-1.0, 1.0, size=(10, 2))
        np.testing.assert_allclose(forward(params, x).array, _naive_forward(params, x), rtol=1e-14, atol=1e-14)

    @pytest.mark.unit
    def test_sdm_stride_changes_the_product(self, rng):
        x = rng.uniform(-1.0, 1.0, size=(6, 2))
        outputs = []
        for stride in (1, 2):
            config = NetworkConfig(kind=ArchitectureKind.SDM, input_dim=2, hidden_layers=4, width=4, skip_stride=stride)
            params = _randomized(config, 2)
            np.testing.assert_allclose(forward(params, x).array, _naive_forward(params, x), rtol=1e-14, atol=1e-14)
            outputs.append(forward(params, x).array)
        assert not np.array_equal(outputs[0], outputs[1])

    @pytest.mark.unit
    def test_dm_with_one_layer_equals_vanilla(self, rng):
        vanilla = _randomized(NetworkConfig(kind=ArchitectureKind.VANILLA, input_dim=2, hidden_layers=1, width=5), 4)
        dm_config = vanilla.config.model_copy(update={"kind": ArchitectureKind.DM})
        dm = NetworkParams(config=dm_config, weights=vanilla.weights, biases=vanilla.biases)
        x = rng.uniform(-1.0, 1.0, size=(8, 2))
        assert np.array_equal(forward(vanilla, x).array, forward(dm, x).array)

    @pytest.mark.unit
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    def test_zero_parameters_give_zero_output(self, kind, tiny_network, rng):
        params = NetworkParams.zeros(tiny_network(kind))
        x = rng.uniform(-1.0, 1.0, size=(5, 2))
        assert not forward(params, x).array.any()
        bundle = forward_with_derivatives(params, x, {(0, 1), (1, 1), (1, 2)})
        assert not bundle.u.value.any()
        assert not bundle.d(0).value.any()
        assert not bundle.d(1).value.any()
        assert not bundle.dd(1).value.any()

    @pytest.mark.unit
    def test_activation_variant_differs_from_hidden_beyond_two_layers(self, rng):
        x = rng.uniform(-1.0, 1.0, size=(4, 2))
        hidden = _randomized(NetworkConfig(kind=ArchitectureKind.DM, input_dim=2, hidden_layers=3, width=4), 9)
        activation = NetworkParams(
            config=hidden.config.model_copy(update={"dm_multiplier": "activation"}),
            weights=hidden.weights, biases=hidden.biases
        )
        assert not np.array_equal(forward(hidden, x).array, forward(activation, x).array)

    @pytest.mark.unit
    def test_non_finite_hidden_output_reports_layer(self, tiny_network, rng):
        params = init_network(tiny_network(ArchitectureKind.VANILLA), 0)
        broken = params.replace({"W1": np.full((4, 2), np.nan)})
        with pytest.raises(DivergenceError) as info:
            forward(broken, rng.uniform(-1.0, 1.0, size=(3, 2)))
        assert info.value.layer == 1

    @pytest.mark.unit
    def test_wrong_input_width_rejected(self, tiny_network):
        params = init_network(tiny_network(ArchitectureKind.DM), 0)
        with pytest.raises(ConfigurationError):
            forward(params, np.zeros((3, 3)))


class TestForwardWithDerivatives:
    """Derivative channels against finite differences of forward()."""

    @pytest.mark.unit
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    @pytest.mark.parametrize("depth,width", [(1, 3), (2, 8), (4, 5)])
    def test_input_derivatives_match_finite_differences(self, kind, depth, width):
        config = NetworkConfig(kind=kind, input_dim=2, hidden_layers=depth, width=width)
        params = _randomized(config, depth * 10 + width)
        rng = np.random.default_rng(depth + width)
        x = rng.uniform(-0.8, 0.8, size=(7, 2))
        eps = 1e-4
        bundle = forward_with_derivatives(params, x, {(0, 1), (0, 2), (1, 1), (1, 2)})
        u = forward(params, x).array
        assert np.array_equal(bundle.u.value, u)
        for dim in (0, 1):
            step = np.zeros(2)
            step[dim] = eps
            plus = forward(params, x + step).array
            minus = forward(params, x - step).array
            np.testing.assert_allclose(bundle.d(dim).value, (plus - minus) / (2 * eps), rtol=1e-5, atol=1e-6)
            np.testing.assert_allclose(bundle.dd(dim).value, (plus - 2 * u + minus) / eps ** 2, rtol=1e-5, atol=1e-6)

    @pytest.mark.unit
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    def test_parameter_gradient_of_second_derivative_loss(self, kind):
        config = NetworkConfig(kind=kind, input_dim=2, hidden_layers=3, width=4)
        params = _randomized(config, 21)
        rng = np.random.default_rng(21)
        x = rng.uniform(-0.8, 0.8, size=(6, 2))

        def scalar_value(candidate: NetworkParams) -> float:
            network = TapedNetwork(candidate)
            bundle = network.forward_with_derivatives(x, {(1, 2)})
            return network.tape.mean(network.tape.square(bundle.dd(1))).item()

        network = TapedNetwork(params)
        bundle = network.forward_with_derivatives(x, {(1, 2)})
        scalar = network.tape.mean(network.tape.square(bundle.dd(1)))
        grads = network.tape.backward(scalar, network.parameter_names)

        eps = 1e-6
        named = params.named_arrays()
        for _ in range(10):
            name = list(named)[rng.integers(len(named))]
            index = tuple(int(rng.integers(n)) for n in named[name].shape)
            plus = named[name].copy()
            minus = named[name].copy()
            plus[index] += eps
            minus[index] -= eps
            fd = (scalar_value(params.replace({name: plus})) - scalar_value(params.replace({name: minus}))) / (2 * eps)
            assert grads[name][index] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    @pytest.mark.unit
    def test_second_derivative_channel_is_a_column(self, tiny_network, rng):
        params = _randomized(tiny_network(ArchitectureKind.VANILLA, hidden_layers=1), 0)
        bundle = forward_with_derivatives(params, rng.uniform(-1, 1, size=(3, 2)), {(0, 2)})
        assert bundle.dd(0).shape == (3, 1)

    @pytest.mark.unit
    def test_missing_channel_raises(self, tiny_network, rng):
        params = init_network(tiny_network(ArchitectureKind.DM), 0)
        bundle = forward_with_derivatives(params, rng.uniform(-1, 1, size=(3, 2)), {(0, 1)})
        with pytest.raises(ConfigurationError):
            bundle.dd(0)
        with pytest.raises(ConfigurationError):
            bundle.d(1)

    @pytest.mark.unit
    @pytest.mark.parametrize("direction", [(0, 3), (2, 1), (-1, 1)])
    def test_invalid_directions_rejected(self, direction, tiny_network):
        params = init_network(tiny_network(ArchitectureKind.DM), 0)
        with pytest.raises(ConfigurationError):
            forward_with_derivatives(params, np.zeros((2, 2)), {direction})


class TestNormalization:

    @pytest.mark.unit
    def test_affine_endpoints(self):
        bounds = DomainBounds.from_pairs([("x", 0.0, 2.0 * math.pi)])
        mapped = normalize_inputs(np.array([[0.0], [math.pi], [2.0 * math.pi]]), bounds).array
        np.testing.assert_allclose(mapped.reshape(-1), [-1.0, 0.0, 1.0], atol=1e-15)

    @pytest.mark.unit
    def test_second_order_chain_factor(self):
        bounds = DomainBounds.from_pairs([("t", 0.0, 1.0), ("x", 0.0, 2.0 * math.pi)])
        assert chain_factor(bounds, 1, 2) == pytest.approx(1.0 / math.pi ** 2, rel=1e-15)
        assert chain_factor(bounds, 0, 1) == 2.0

    @pytest.mark.unit
    def test_outside_bounds_rejected(self):
        bounds = DomainBounds.from_pairs([("t", 0.0, 1.0), ("x", -1.0, 1.0)])
        with pytest.raises(ConfigurationError):
            normalize_inputs(np.array([[0.5, 1.5]]), bounds)

    @pytest.mark.unit
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    def test_raw_coordinate_derivatives_match_finite_differences(self, kind, tiny_network):
        bounds = DomainBounds.from_pairs([("t", 0.0, 1.0), ("x", 0.0, 2.0 * math.pi)])
        params = _randomized(tiny_network(kind), 31)
        rng = np.random.default_rng(31)
        raw = np.column_stack([rng.uniform(0.1, 0.9, 6), rng.uniform(0.5, 5.5, 6)])
        bundle = forward_with_derivatives(params, raw, {(0, 1), (1, 1), (1, 2)}, bounds)

        def u(points: np.ndarray) -> np.ndarray:
            return forward(params, normalize_inputs(points, bounds)).array

        eps = 1e-4
        for dim in (0, 1):
            step = np.zeros(2)
            step[dim] = eps
            fd = (u(raw + step) - u(raw - step)) / (2 * eps)
            np.testing.assert_allclose(bundle.d(dim).value, fd, rtol=1e-5, atol=1e-6)
        step = np.array([0.0, eps])
        fd2 = (u(raw + step) - 2 * u(raw) + u(raw - step)) / eps ** 2
        np.testing.assert_allclose(bundle.dd("x").value, fd2, rtol=1e-5, atol=1e-6)
