"""
DMPINN Problem and Loss Unit Tests
==================================

Technical Focus:
- Preset values of the four benchmarks
- Residual operators annihilating known exact solutions
- Helmholtz source term
- Loss decomposition, periodic pair symmetry and zero-network limits
- Total-loss gradient against finite differences in θ
"""

import math

import numpy as np
import pytest

try:
    from dmpinn.architectures import DerivativeBundle, NetworkParams, forward, init_network, normalize_inputs
    from dmpinn.models import ArchitectureKind, ConfigurationError, NetworkConfig, ProblemName
    from dmpinn.problems import get_problem, loss_and_gradient, loss_components, pde_residual, source_q
    from dmpinn.sampling import sample_problem
except ImportError as e:
    pytest.skip(f"DMPINN problems module unavailable: {e}", allow_module_level=True)

from tests.conftest import ALL_PROBLEMS


class TestPresets:

    @pytest.mark.unit
    def test_allen_cahn_preset(self):
        problem = get_problem("AllanCahn")
        assert (problem.n_interior, problem.n_initial, problem.n_boundary) == (20000, 100, 200)
        assert (problem.weights.r, problem.weights.ic, problem.weights.bc) == (1.0, 100.0, 1.0)
        assert problem.periodic
        assert problem.constant("diffusion") == 1e-4
        assert problem.network_config() == NetworkConfig(
            kind=ArchitectureKind.DM, input_dim=2, hidden_layers=4, width=128
        )

    @pytest.mark.unit
    def test_helmholtz_preset(self):
        problem = get_problem(ProblemName.HELMHOLTZ)
        assert problem.time_label is None
        assert problem.boundary_labels == ("x", "y")
        assert problem.learning_rate == 2e-3
        assert problem.width == 50

    @pytest.mark.unit
    def test_burgers_and_convection_presets(self):
        burgers = get_problem(ProblemName.BURGERS)
        assert burgers.constant("nu") == pytest.approx(0.01 / math.pi)
        assert (burgers.architecture, burgers.hidden_layers, burgers.width) == (ArchitectureKind.SDM, 6, 80)
        convection = get_problem(ProblemName.CONVECTION)
        assert convection.constant("beta") == 30.0
        assert convection.bounds.interval("x") == (0.0, 2.0 * math.pi)
        assert convection.iterations == 10000

    @pytest.mark.unit
    def test_unknown_problem(self):
        with pytest.raises(ConfigurationError) as info:
            get_problem("Poisson")
        assert "AllanCahn" in str(info.value)

    @pytest.mark.unit
    def test_missing_constant(self):
        with pytest.raises(ConfigurationError):
            get_problem(ProblemName.CONVECTION).constant("nu")

    @pytest.mark.unit
    def test_with_overrides_rejects_unknown_fields(self):
        with pytest.raises(ConfigurationError):
            get_problem(ProblemName.BURGERS).with_overrides(viscosity=1.0)


class TestSourceTerm:

    @pytest.mark.unit
    def test_vanishes_on_x_zero(self):
        y = np.linspace(-1.0, 1.0, 9)
        assert np.all(np.abs(source_q(np.zeros_like(y), y)) < 1e-15)

    @pytest.mark.unit
    def test_known_value(self):
        # sin(π/2) sin(π/2) = 1
        assert source_q(0.5, 0.125)[()] == pytest.approx(1.0 - 17.0 * math.pi ** 2, rel=1e-14)


class TestResiduals:
    """Exact solutions fed as derivative bundles must give zero residual."""

    @pytest.mark.unit
    def test_allen_cahn_constant_state(self, rng):
        problem = get_problem(ProblemName.ALLAN_CAHN)
        points = rng.uniform(-1.0, 1.0, size=(16, 2))
        ones, zeros = np.ones(16), np.zeros(16)
        bundle = DerivativeBundle.from_arrays(("t", "x"), ones, {"t": zeros}, {"x": zeros})
        assert not pde_residual(problem, bundle, points).value.any()

    @pytest.mark.unit
    def test_convection_travelling_wave(self, rng):
        problem = get_problem(ProblemName.CONVECTION)
        t = rng.uniform(0.0, 1.0, 32)
        x = rng.uniform(0.0, 2.0 * math.pi, 32)
        phase = x - 30.0 * t
        bundle = DerivativeBundle.from_arrays(
            ("t", "x"), np.sin(phase), {"t": -30.0 * np.cos(phase), "x": np.cos(phase)}
        )
        residual = pde_residual(problem, bundle, np.column_stack([t, x])).value
        assert np.max(np.abs(residual)) < 1e-12

    @pytest.mark.unit
    def test_helmholtz_manufactured_solution(self, rng):
        problem = get_problem(ProblemName.HELMHOLTZ)
        x, y = rng.uniform(-1.0, 1.0, 32), rng.uniform(-1.0, 1.0, 32)
        u = np.sin(math.pi * x) * np.sin(4.0 * math.pi * y)
        bundle = DerivativeBundle.from_arrays(
            ("x", "y"), u, second={"x": -math.pi ** 2 * u, "y": -16.0 * math.pi ** 2 * u}
        )
        residual = pde_residual(problem, bundle, np.column_stack([x, y])).value
        assert np.max(np.abs(residual)) < 1e-12

    @pytest.mark.unit
    def test_burgers_steady_zero_state(self):
        problem = get_problem(ProblemName.BURGERS)
        zeros = np.zeros(4)
        bundle = DerivativeBundle.from_arrays(("t", "x"), zeros, {"t": zeros, "x": zeros}, {"x": zeros})
        assert not pde_residual(problem, bundle, np.zeros((4, 2))).value.any()

    @pytest.mark.unit
    def test_missing_channel_is_a_configuration_error(self):
        problem = get_problem(ProblemName.BURGERS)
        zeros = np.zeros(4)
        bundle = DerivativeBundle.from_arrays(("t", "x"), zeros, {"t": zeros, "x": zeros})
        with pytest.raises(ConfigurationError):
            pde_residual(problem, bundle, np.zeros((4, 2)))

    @pytest.mark.unit
    def test_mismatched_labels_rejected(self):
        problem = get_problem(ProblemName.HELMHOLTZ)
        bundle = DerivativeBundle.from_arrays(("t", "x"), np.zeros(2), second={"x": np.zeros(2)})
        with pytest.raises(ConfigurationError):
            pde_residual(problem, bundle, np.zeros((2, 2)))


class TestLossComponents:

    @pytest.mark.unit
    def test_zero_network_burgers_initial_loss(self, small_problem):
        problem = small_problem(ProblemName.BURGERS)
        samples = sample_problem(problem, 0)
        params = NetworkParams.zeros(problem.network_config(hidden_layers=2, width=5))
        loss = loss_components(problem, params, samples)
        expected = np.mean(np.sin(math.pi * samples.initial[:, 1]) ** 2)
        assert loss.l_ic == pytest.approx(expected, rel=1e-14)
        assert loss.l_r == 0.0
        assert loss.l_bc == 0.0

    @pytest.mark.unit
    def test_zero_network_has_no_periodic_mismatch(self, small_problem):
        problem = small_problem(ProblemName.ALLAN_CAHN)
        params = NetworkParams.zeros(problem.network_config(hidden_layers=2, width=5))
        assert loss_components(problem, params, sample_problem(problem, 1)).l_bc == 0.0

    @pytest.mark.unit
    def test_helmholtz_initial_term_is_zero(self, small_problem):
        problem = small_problem(ProblemName.HELMHOLTZ)
        params = init_network(problem.network_config(hidden_layers=2, width=5), 0)
        assert loss_components(problem, params, sample_problem(problem, 0)).l_ic == 0.0

    @pytest.mark.unit
    @pytest.mark.parametrize("name", ALL_PROBLEMS, ids=lambda n: n.value)
    def test_total_is_weighted_sum(self, name, small_problem):
        problem = small_problem(name)
        params = init_network(problem.network_config(hidden_layers=2, width=5), 3)
        loss = loss_components(problem, params, sample_problem(problem, 3))
        w = problem.weights
        assert loss.l_total == (w.r * loss.l_r + w.ic * loss.l_ic) + w.bc * loss.l_bc
        assert set(loss.as_dict()) == {"loss_total", "loss_r", "loss_ic", "loss_bc"}

    @pytest.mark.unit
    @pytest.mark.parametrize("name", [ProblemName.ALLAN_CAHN, ProblemName.CONVECTION])
    def test_periodic_loss_invariant_under_face_swap(self, name, small_problem):
        problem = small_problem(name)
        params = init_network(problem.network_config(hidden_layers=2, width=5), 2)
        samples = sample_problem(problem, 2)
        before = loss_components(problem, params, samples).l_bc
        samples.boundary["x_lo"], samples.boundary["x_hi"] = samples.boundary["x_hi"], samples.boundary["x_lo"]
        assert loss_components(problem, params, samples).l_bc == pytest.approx(before, rel=1e-14)

    @pytest.mark.unit
    def test_vanilla_single_layer_convection_loss(self, small_problem):
        """Untaped numpy evaluation of the convection loss for a one-layer tanh network."""
        problem = small_problem(ProblemName.CONVECTION)
        config = problem.network_config(ArchitectureKind.VANILLA, hidden_layers=1, width=3)
        params = init_network(config, 4).replace({"b1": np.array([0.1, -0.2, 0.3]), "b2": np.array([0.05])})
        samples = sample_problem(problem, 4)
        w1, b1 = params.weights[0], params.biases[0]
        w2, b2 = params.weights[1], params.biases[1]

        def u(points):
            z = normalize_inputs(points, problem.bounds).array
            return (np.tanh(z @ w1.T + b1) @ w2.T + b2).reshape(-1)

        z = normalize_inputs(samples.interior, problem.bounds).array
        a = np.tanh(z @ w1.T + b1)
        slope = (1.0 - a ** 2) * w2.reshape(-1)
        u_t = (slope @ w1[:, 0]) * 2.0
        u_x = (slope @ w1[:, 1]) * (2.0 / (2.0 * math.pi))
        l_r = np.mean((u_t + 30.0 * u_x) ** 2)
        l_ic = np.mean((u(samples.initial) - np.sin(samples.initial[:, 1])) ** 2)
        l_bc = np.mean((u(samples.boundary["x_hi"]) - u(samples.boundary["x_lo"])) ** 2)

        loss = loss_components(problem, params, samples)
        assert loss.l_r == pytest.approx(l_r, rel=1e-12)
        assert loss.l_ic == pytest.approx(l_ic, rel=1e-12)
        assert loss.l_bc == pytest.approx(l_bc, rel=1e-12, abs=1e-15)
        assert np.allclose(forward(params, z).array.reshape(-1), u(samples.interior), rtol=1e-14, atol=1e-15)

    @pytest.mark.unit
    def test_samples_from_another_problem_rejected(self, small_problem):
        problem = small_problem(ProblemName.HELMHOLTZ)
        params = NetworkParams.zeros(problem.network_config(hidden_layers=1, width=2))
        with pytest.raises(ConfigurationError):
            loss_components(problem, params, sample_problem(small_problem(ProblemName.BURGERS), 0))


class TestLossGradient:

    @pytest.mark.unit
    @pytest.mark.parametrize("kind", list(ArchitectureKind), ids=lambda k: k.value)
    @pytest.mark.parametrize("name", ALL_PROBLEMS, ids=lambda n: n.value)
    def test_gradient_matches_finite_differences(self, name, kind, small_problem):
        problem = small_problem(name)
        params = init_network(problem.network_config(kind, hidden_layers=2, width=4), 6)
        samples = sample_problem(problem, 6)
        _, grads = loss_and_gradient(problem, params, samples)

        def total(candidate: NetworkParams) -> float:
            return loss_components(problem, candidate, samples).l_total

        rng = np.random.default_rng(6)
        named = params.named_arrays()
        names = list(named)
        eps = 1e-6
        for _ in range(20):
            name_ = names[int(rng.integers(len(names)))]
            index = tuple(int(rng.integers(n)) for n in named[name_].shape)
            plus, minus = named[name_].copy(), named[name_].copy()
            plus[index] += eps
            minus[index] -= eps
            fd = (total(params.replace({name_: plus})) - total(params.replace({name_: minus}))) / (2 * eps)
            scale = max(1.0, abs(total(params)))
            assert grads[name_][index] == pytest.approx(fd, rel=1e-6, abs=1e-8 * scale)

    @pytest.mark.unit
    def test_gradient_covers_every_parameter(self, small_problem):
        problem = small_problem(ProblemName.BURGERS)
        params = init_network(problem.network_config(ArchitectureKind.MODIFIED_MLP, hidden_layers=2, width=4), 0)
        _, grads = loss_and_gradient(problem, params, sample_problem(problem, 0))
        assert list(grads) == list(params.named_arrays())
        assert all(grads[k].shape == v.shape for k, v in params.named_arrays().items())
