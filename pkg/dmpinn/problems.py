"""
DMPINN Benchmark Problems

The four benchmark PDEs: domains, sample counts, loss weights, residual
operators, initial/boundary losses and the weighted total loss.

    AllanCahn   u_t - 1e-4 u_xx + 5u^3 - 5u = 0     periodic in x, u(0,x) = x^2 cos(pi x)
    Helmholtz   u_xx + u_yy + k^2 u - q(x,y) = 0     u = 0 on the square's edges
    Burgers     u_t + u u_x - (0.01/pi) u_xx = 0      u(t,+-1) = 0, u(0,x) = -sin(pi x)
    Convection  u_t + beta u_x = 0                    periodic in x, u(0,x) = sin(x)
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Set, Tuple

import numpy as np

from .architectures import DerivativeBundle, Direction, NetworkParams, TapedNetwork
from .models import (
    ArchitectureKind, ConfigurationError, DivergenceError, LossWeights, NetworkConfig, ProblemName
)
from .sampling import DomainBounds, SampleSet
from .tape import ArrayLike, GradMap, Tape, TapeNode, as_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemSpec:
    """
    One PDE benchmark with its training preset.

    ``directions`` lists the (label, order) partials the residual needs.
    The preset fields (architecture through iterations) are the defaults
    a run config falls back to.
    """
    name: ProblemName
    bounds: DomainBounds
    n_interior: int
    n_initial: int
    n_boundary: int
    weights: LossWeights
    directions: Tuple[Tuple[str, int], ...]
    constants: Mapping[str, float] = field(default_factory=dict)
    time_label: Optional[str] = "t"
    boundary_labels: Tuple[str, ...] = ("x",)
    periodic: bool = False
    architecture: ArchitectureKind = ArchitectureKind.DM
    hidden_layers: int = 4
    width: int = 50
    learning_rate: float = 1e-3
    iterations: int = 15000

    def __post_init__(self) -> None:
        if self.n_interior < 1 or self.n_boundary < 1 or self.n_initial < 0:
            raise ConfigurationError(f"{self.name.value}: sample counts must be positive")
        if self.time_label is not None and self.n_initial < 1:
            raise ConfigurationError(f"{self.name.value}: time-dependent problems need initial points")

    @property
    def input_dim(self) -> int:
        return self.bounds.dims

    def constant(self, key: str) -> float:
        try:
            return float(self.constants[key])
        except KeyError:
            raise ConfigurationError(f"{self.name.value} has no constant '{key}'") from None

    def residual_directions(self) -> Set[Direction]:
        return {(self.bounds.index(label), order) for label, order in self.directions}

    def network_config(
        self,
        kind: Optional[ArchitectureKind] = None,
        hidden_layers: Optional[int] = None,
        width: Optional[int] = None,
        dm_multiplier: str = "hidden",
        skip_stride: int = 2
    ) -> NetworkConfig:
        return NetworkConfig(
            kind=kind or self.architecture,
            input_dim=self.input_dim,
            hidden_layers=hidden_layers or self.hidden_layers,
            width=width or self.width,
            dm_multiplier=dm_multiplier,
            skip_stride=skip_stride
        )

    def with_counts(
        self,
        n_interior: Optional[int] = None,
        n_initial: Optional[int] = None,
        n_boundary: Optional[int] = None
    ) -> "ProblemSpec":
        """Same problem with different sample counts (CI and property-test profiles)."""
        return dataclasses.replace(
            self,
            n_interior=self.n_interior if n_interior is None else n_interior,
            n_initial=self.n_initial if n_initial is None or self.time_label is None else n_initial,
            n_boundary=self.n_boundary if n_boundary is None else n_boundary
        )

    def with_overrides(self, **changes: Any) -> "ProblemSpec":
        """Replace preset fields; ``None`` values are ignored."""
        known = {f.name for f in dataclasses.fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ConfigurationError(f"unknown problem fields: {sorted(unknown)}")
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def initial_condition(self, x: ArrayLike) -> np.ndarray:
        if self.name not in _INITIAL_CONDITIONS:
            raise ConfigurationError(f"{self.name.value} has no initial condition")
        return _INITIAL_CONDITIONS[self.name](as_array(x))


# =============================================================================
# Presets
# =============================================================================

def problem_presets() -> Dict[ProblemName, ProblemSpec]:
    """The four benchmark problems with their training defaults."""
    return {
        ProblemName.ALLAN_CAHN: ProblemSpec(
            name=ProblemName.ALLAN_CAHN,
            bounds=DomainBounds.from_pairs([("t", 0.0, 1.0), ("x", -1.0, 1.0)]),
            n_interior=20000, n_initial=100, n_boundary=200,
            weights=LossWeights(r=1.0, ic=100.0, bc=1.0),
            directions=(("t", 1), ("x", 2)),
            constants={"diffusion": 1e-4, "reaction": 5.0},
            periodic=True,
            architecture=ArchitectureKind.DM, hidden_layers=4, width=128,
            learning_rate=1e-3, iterations=15000
        ),
        ProblemName.HELMHOLTZ: ProblemSpec(
            name=ProblemName.HELMHOLTZ,
            bounds=DomainBounds.from_pairs([("x", -1.0, 1.0), ("y", -1.0, 1.0)]),
            n_interior=20000, n_initial=0, n_boundary=200,
            weights=LossWeights(),
            directions=(("x", 2), ("y", 2)),
            constants={"a1": 1.0, "a2": 4.0, "k": 1.0},
            time_label=None,
            boundary_labels=("x", "y"),
            architecture=ArchitectureKind.DM, hidden_layers=4, width=50,
            learning_rate=2e-3, iterations=15000
        ),
        ProblemName.BURGERS: ProblemSpec(
            name=ProblemName.BURGERS,
            bounds=DomainBounds.from_pairs([("t", 0.0, 1.0), ("x", -1.0, 1.0)]),
            n_interior=10000, n_initial=100, n_boundary=200,
            weights=LossWeights(),
            directions=(("t", 1), ("x", 1), ("x", 2)),
            constants={"nu": 0.01 / math.pi},
            architecture=ArchitectureKind.SDM, hidden_layers=6, width=80,
            learning_rate=1e-3, iterations=15000
        ),
        ProblemName.CONVECTION: ProblemSpec(
            name=ProblemName.CONVECTION,
            bounds=DomainBounds.from_pairs([("t", 0.0, 1.0), ("x", 0.0, 2.0 * math.pi)]),
            n_interior=20000, n_initial=200, n_boundary=400,
            weights=LossWeights(),
            directions=(("t", 1), ("x", 1)),
            constants={"beta": 30.0},
            periodic=True,
            architecture=ArchitectureKind.SDM, hidden_layers=8, width=60,
            learning_rate=1e-3, iterations=10000
        ),
    }


def get_problem(name: Any) -> ProblemSpec:
    try:
        return problem_presets()[ProblemName(name)]
    except ValueError:
        choices = ", ".join(p.value for p in ProblemName)
        raise ConfigurationError(f"unknown problem '{name}' (choose from {choices})") from None


# =============================================================================
# Source term and initial conditions
# =============================================================================

def source_q(x: ArrayLike, y: ArrayLike, a1: float = 1.0, a2: float = 4.0, k: float = 1.0) -> np.ndarray:
    """Helmholtz forcing that makes sin(a1 pi x) sin(a2 pi y) the exact solution."""
    x = as_array(x)
    y = as_array(y)
    shape = np.sin(a1 * math.pi * x) * np.sin(a2 * math.pi * y)
    return -(a1 * math.pi) ** 2 * shape - (a2 * math.pi) ** 2 * shape + k ** 2 * shape


_INITIAL_CONDITIONS: Dict[ProblemName, Callable[[np.ndarray], np.ndarray]] = {
    ProblemName.ALLAN_CAHN: lambda x: x ** 2 * np.cos(math.pi * x),
    ProblemName.BURGERS: lambda x: -np.sin(math.pi * x),
    ProblemName.CONVECTION: lambda x: np.sin(x),
}


# =============================================================================
# Residuals
# =============================================================================

def pde_residual(problem: ProblemSpec, bundle: DerivativeBundle, points: ArrayLike) -> TapeNode:
    """
    Taped PDE residual r at ``points`` (raw coordinates) from ``bundle``.

    Raises:
        ConfigurationError: the bundle lacks a channel the equation needs
    """
    tape = bundle.tape
    u = bundle.u
    labels = problem.bounds.labels
    if bundle.labels and tuple(bundle.labels) != labels:
        raise ConfigurationError(f"bundle labels {bundle.labels} do not match {problem.name.value} {labels}")
    if not bundle.labels:
        bundle.labels = labels

    if problem.name is ProblemName.ALLAN_CAHN:
        reaction = problem.constant("reaction")
        cubic = tape.mul(tape.square(u), u)
        transport = tape.sub(bundle.d("t"), tape.scale(bundle.dd("x"), problem.constant("diffusion")))
        return tape.add(transport, tape.scale(tape.sub(cubic, u), reaction))

    if problem.name is ProblemName.HELMHOLTZ:
        pts = as_array(points)
        k = problem.constant("k")
        q = source_q(pts[:, 0], pts[:, 1], problem.constant("a1"), problem.constant("a2"), k)
        laplacian = tape.add(bundle.dd("x"), bundle.dd("y"))
        return tape.sub(tape.add(laplacian, tape.scale(u, k * k)), tape.constant(q.reshape(-1, 1)))

    if problem.name is ProblemName.BURGERS:
        advection = tape.add(bundle.d("t"), tape.mul(u, bundle.d("x")))
        return tape.sub(advection, tape.scale(bundle.dd("x"), problem.constant("nu")))

    if problem.name is ProblemName.CONVECTION:
        return tape.add(bundle.d("t"), tape.scale(bundle.d("x"), problem.constant("beta")))

    raise ConfigurationError(f"no residual for problem {problem.name}")


# =============================================================================
# Losses
# =============================================================================

@dataclass
class LossBreakdown:
    """Taped loss terms of one evaluation; ``total`` is the backward seed."""
    tape: Tape
    total: TapeNode
    residual: TapeNode
    initial: TapeNode
    boundary: TapeNode
    network: Optional[TapedNetwork] = None

    @property
    def l_total(self) -> float:
        return self.total.item()

    @property
    def l_r(self) -> float:
        return self.residual.item()

    @property
    def l_ic(self) -> float:
        return self.initial.item()

    @property
    def l_bc(self) -> float:
        return self.boundary.item()

    def as_dict(self) -> Dict[str, float]:
        return {"loss_total": self.l_total, "loss_r": self.l_r, "loss_ic": self.l_ic, "loss_bc": self.l_bc}

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_dict().values())


def _mean_square(tape: Tape, node: TapeNode) -> TapeNode:
    return tape.mean(tape.square(node))


def _boundary_loss(problem: ProblemSpec, network: TapedNetwork, samples: SampleSet) -> TapeNode:
    tape = network.tape
    bounds = problem.bounds

    if problem.periodic:
        (label,) = problem.boundary_labels
        dim = bounds.index(label)
        # first-derivative continuity only where the equation is second order in x
        match_slope = (label, 2) in problem.directions
        directions = {(dim, 1)} if match_slope else set()
        lo = network.forward_with_derivatives(samples.boundary[f"{label}_lo"], directions, bounds)
        hi = network.forward_with_derivatives(samples.boundary[f"{label}_hi"], directions, bounds)
        gap = tape.square(tape.sub(hi.u, lo.u))
        if match_slope:
            gap = tape.add(gap, tape.square(tape.sub(hi.d(dim), lo.d(dim))))
        return tape.mean(gap)

    stacked = np.concatenate([samples.boundary[face] for face in sorted(samples.boundary)], axis=0)
    edge = network.forward_with_derivatives(stacked, (), bounds)
    return _mean_square(tape, edge.u)


def loss_components(
    problem: ProblemSpec,
    params: NetworkParams,
    samples: SampleSet,
    network: Optional[TapedNetwork] = None
) -> LossBreakdown:
    """
    Weighted PINN loss on a fixed sample.

    Technical Implementation:
    - L_r: mean squared residual over interior points
    - L_ic: mean squared misfit to h(x) on the t = t0 slice (0 when timeless)
    - L_bc: periodic pair mismatch or mean squared Dirichlet value
    - L_total = (λ_r L_r + λ_ic L_ic) + λ_bc L_bc, all on one tape
    """
    if tuple(samples.labels) != problem.bounds.labels:
        raise ConfigurationError(f"samples labelled {samples.labels} do not belong to {problem.name.value}")
    network = network if network is not None else TapedNetwork(params)
    tape = network.tape
    bounds = problem.bounds

    interior = network.forward_with_derivatives(samples.interior, problem.residual_directions(), bounds)
    residual = pde_residual(problem, interior, samples.interior)
    l_r = _mean_square(tape, residual)

    if problem.time_label is not None and samples.initial is not None:
        start = network.forward_with_derivatives(samples.initial, (), bounds)
        spatial = [i for i, label in enumerate(bounds.labels) if label != problem.time_label]
        target = problem.initial_condition(samples.initial[:, spatial[0]]).reshape(-1, 1)
        l_ic = _mean_square(tape, tape.sub(start.u, tape.constant(target)))
    else:
        l_ic = tape.constant(0.0)

    l_bc = _boundary_loss(problem, network, samples)

    weights = problem.weights
    total = tape.add(
        tape.add(tape.scale(l_r, weights.r), tape.scale(l_ic, weights.ic)),
        tape.scale(l_bc, weights.bc)
    )
    return LossBreakdown(tape=tape, total=total, residual=l_r, initial=l_ic, boundary=l_bc, network=network)


def loss_and_gradient(
    problem: ProblemSpec,
    params: NetworkParams,
    samples: SampleSet,
    iteration: Optional[int] = None
) -> Tuple[LossBreakdown, GradMap]:
    """
    Loss terms plus ∂L_total/∂θ from one backward pass.

    Raises:
        DivergenceError: non-finite forward value, loss or gradient
    """
    network = TapedNetwork(params)
    try:
        loss = loss_components(problem, params, samples, network)
    except DivergenceError as e:
        raise DivergenceError(f"forward pass diverged: {e}", layer=e.layer, iteration=iteration) from e
    if not loss.is_finite():
        raise DivergenceError("non-finite loss", iteration=iteration)
    grads = loss.tape.backward(loss.total, network.parameter_names)
    if not grads.is_finite():
        raise DivergenceError("non-finite gradient", iteration=iteration)
    return loss, grads
