"""
DMPINN Network Architectures

Vanilla, ResNet, ModifiedMLP, densely multiplied (DM) and skip densely
multiplied (SDM) networks built entirely from tape primitives. Input
derivatives (first and second order, per direction) are propagated
forward alongside the value, so a residual loss assembled from them can
be differentiated in the parameters with a single backward pass.

Propagation rules for z = W h + b, a = tanh(z):
    z_d  = W h_d                 z_dd = W h_dd
    a_d  = φ'(z) z_d             a_dd = φ''(z) z_d z_d + φ'(z) z_dd
    φ'   = 1 - a²                φ''  = -2 a φ'
Products y = a ⊙ b follow the Leibniz rule; residual sums are linear.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .models import (
    ArchitectureKind, ConfigurationError, DivergenceError, ManifestMismatchError, NetworkConfig
)
from .sampling import DomainBounds
from .tape import ArrayLike, Tape, TapeNode, Tensor, as_array

logger = logging.getLogger(__name__)

Direction = Tuple[int, int]


# =============================================================================
# Parameters
# =============================================================================

@dataclass(frozen=True)
class NetworkParams:
    """
    Layer weights and biases of one network (θ).

    ``weights[k]`` is (out × in); the last entry is the linear output
    layer. ModifiedMLP additionally carries the two input encoders.
    """
    config: NetworkConfig
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    encoders: Tuple[Tuple[np.ndarray, np.ndarray], ...] = ()

    def named_arrays(self) -> Dict[str, np.ndarray]:
        """Every parameter array keyed by its canonical name, in θ order."""
        named: Dict[str, np.ndarray] = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            named[f"W{k}"] = w
            named[f"b{k}"] = b
        for tag, (w, b) in zip(("u", "v"), self.encoders):
            named[f"W{tag}"] = w
            named[f"b{tag}"] = b
        return named

    def manifest(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(array.shape) for name, array in self.named_arrays().items()}

    @staticmethod
    def expected_manifest(config: NetworkConfig) -> Dict[str, Tuple[int, ...]]:
        manifest: Dict[str, Tuple[int, ...]] = {}
        for k, (out_dim, in_dim) in enumerate(config.layer_shapes(), start=1):
            manifest[f"W{k}"] = (out_dim, in_dim)
            manifest[f"b{k}"] = (out_dim,)
        for tag, (out_dim, in_dim) in zip(("u", "v"), config.encoder_shapes()):
            manifest[f"W{tag}"] = (out_dim, in_dim)
            manifest[f"b{tag}"] = (out_dim,)
        return manifest

    @classmethod
    def from_named(cls, config: NetworkConfig, arrays: Dict[str, ArrayLike]) -> "NetworkParams":
        """Rebuild params from named arrays, checking every shape."""
        expected = cls.expected_manifest(config)
        converted = {name: np.array(as_array(value), dtype=np.float64) for name, value in arrays.items()}
        found = {name: tuple(array.shape) for name, array in converted.items()}
        if found != expected:
            raise ManifestMismatchError(expected, found)
        layers = len(config.layer_shapes())
        weights = tuple(converted[f"W{k}"] for k in range(1, layers + 1))
        biases = tuple(converted[f"b{k}"] for k in range(1, layers + 1))
        encoders = tuple(
            (converted[f"W{tag}"], converted[f"b{tag}"])
            for tag in ("u", "v")[: len(config.encoder_shapes())]
        )
        return cls(config=config, weights=weights, biases=biases, encoders=encoders)

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "NetworkParams":
        return cls.from_named(
            config,
            {name: np.zeros(shape) for name, shape in cls.expected_manifest(config).items()}
        )

    def replace(self, arrays: Dict[str, np.ndarray]) -> "NetworkParams":
        merged = dict(self.named_arrays())
        merged.update(arrays)
        return NetworkParams.from_named(self.config, merged)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.named_arrays().values())


def _validate_config(config: NetworkConfig) -> None:
    if config.hidden_layers < 1 or config.width < 1:
        raise ConfigurationError("networks need at least one hidden layer of width >= 1")


def param_count(config: NetworkConfig) -> int:
    """Σ (in + 1)·out over dense layers, plus the ModifiedMLP encoders."""
    _validate_config(config)
    shapes = config.layer_shapes() + config.encoder_shapes()
    return sum((in_dim + 1) * out_dim for out_dim, in_dim in shapes)


def init_network(config: NetworkConfig, seed: int) -> NetworkParams:
    """
    Xavier-normal weights, zero biases, deterministic per seed.

    Draw order is the dense layers first, then the encoders, so kinds
    with identical dense shapes start from identical dense weights.
    """
    _validate_config(config)
    rng = np.random.default_rng(seed)

    def xavier(out_dim: int, in_dim: int) -> np.ndarray:
        std = np.sqrt(2.0 / (in_dim + out_dim))
        return rng.normal(0.0, std, size=(out_dim, in_dim))

    weights = tuple(xavier(o, i) for o, i in config.layer_shapes())
    biases = tuple(np.zeros(o) for o, _ in config.layer_shapes())
    encoders = tuple((xavier(o, i), np.zeros(o)) for o, i in config.encoder_shapes())
    params = NetworkParams(config=config, weights=weights, biases=biases, encoders=encoders)
    logger.debug(f"Initialized {config.kind.value} network with {param_count(config)} parameters (seed={seed})")
    return params


# =============================================================================
# Input normalization
# =============================================================================

def chain_factor(bounds: DomainBounds, dim: int, order: int) -> float:
    """Factor converting an order-``order`` derivative in [-1, 1] to raw coordinates."""
    return (2.0 / (bounds.highs[dim] - bounds.lows[dim])) ** order


def normalize_inputs(raw: ArrayLike, bounds: DomainBounds) -> Tensor:
    """Affine map of every dimension from [lo, hi] onto [-1, 1]."""
    points = as_array(raw)
    if points.ndim != 2 or points.shape[1] != bounds.dims:
        raise ConfigurationError(f"expected points of shape [N x {bounds.dims}], got {points.shape}")
    if not bounds.contains(points):
        raise ConfigurationError("input point outside the problem bounds")
    lows = np.asarray(bounds.lows)
    highs = np.asarray(bounds.highs)
    return Tensor(2.0 * (points - lows) / (highs - lows) - 1.0)


# =============================================================================
# Derivative bundle
# =============================================================================

@dataclass
class DerivativeBundle:
    """Network output u plus requested input partials, all living on ``tape``."""
    tape: Tape
    u: TapeNode
    first: Dict[int, TapeNode] = field(default_factory=dict)
    second: Dict[int, TapeNode] = field(default_factory=dict)
    labels: Tuple[str, ...] = ()

    def _dim(self, key: Union[int, str]) -> int:
        if isinstance(key, str):
            if key not in self.labels:
                raise ConfigurationError(f"unknown coordinate label '{key}'")
            return self.labels.index(key)
        return key

    def d(self, key: Union[int, str]) -> TapeNode:
        dim = self._dim(key)
        if dim not in self.first:
            raise ConfigurationError(f"first-derivative channel for '{key}' was not requested")
        return self.first[dim]

    def dd(self, key: Union[int, str]) -> TapeNode:
        dim = self._dim(key)
        if dim not in self.second:
            raise ConfigurationError(f"second-derivative channel for '{key}' was not requested")
        return self.second[dim]

    @property
    def batch_size(self) -> int:
        return self.u.shape[0]

    @classmethod
    def from_arrays(
        cls,
        labels: Sequence[str],
        u: ArrayLike,
        first: Optional[Dict[str, ArrayLike]] = None,
        second: Optional[Dict[str, ArrayLike]] = None
    ) -> "DerivativeBundle":
        """Bundle of known values (e.g. an exact solution) recorded as constants."""
        tape = Tape()
        labels = tuple(labels)

        def column(values: ArrayLike) -> TapeNode:
            return tape.constant(as_array(values).reshape(-1, 1))

        return cls(
            tape=tape,
            u=column(u),
            first={labels.index(k): column(v) for k, v in (first or {}).items()},
            second={labels.index(k): column(v) for k, v in (second or {}).items()},
            labels=labels
        )


# =============================================================================
# Channel algebra
# =============================================================================

@dataclass
class _Channels:
    """Value plus per-direction derivatives; ``None`` marks a structural zero."""
    value: TapeNode
    first: Dict[int, Optional[TapeNode]]
    second: Dict[int, Optional[TapeNode]]


class _ChannelOps:
    """Leibniz-rule algebra over _Channels recorded on one tape."""

    def __init__(self, tape: Tape) -> None:
        self.tape = tape
        self._ones: Dict[Tuple[int, ...], TapeNode] = {}

    def ones(self, shape: Tuple[int, ...]) -> TapeNode:
        if shape not in self._ones:
            self._ones[shape] = self.tape.constant(np.ones(shape))
        return self._ones[shape]

    def _add(self, a: Optional[TapeNode], b: Optional[TapeNode]) -> Optional[TapeNode]:
        if a is None:
            return b
        if b is None:
            return a
        return self.tape.add(a, b)

    def _mul(self, a: Optional[TapeNode], b: Optional[TapeNode]) -> Optional[TapeNode]:
        if a is None or b is None:
            return None
        return self.tape.mul(a, b)

    def linear(self, h: _Channels, weight: TapeNode, bias: TapeNode) -> _Channels:
        tape = self.tape
        value = tape.add_bias(tape.matmul(h.value, weight, transpose_b=True), bias)
        first = {d: None if c is None else tape.matmul(c, weight, transpose_b=True) for d, c in h.first.items()}
        second = {d: None if c is None else tape.matmul(c, weight, transpose_b=True) for d, c in h.second.items()}
        return _Channels(value, first, second)

    def activate(self, z: _Channels) -> _Channels:
        tape = self.tape
        a = tape.tanh(z.value)
        if not any(c is not None for c in z.first.values()):
            return _Channels(a, dict(z.first), dict(z.second))
        dphi = tape.sub(self.ones(a.shape), tape.square(a))
        d2phi = tape.scale(tape.mul(a, dphi), -2.0) if z.second else None
        first = {d: self._mul(dphi, c) for d, c in z.first.items()}
        second = {}
        for d, c in z.second.items():
            curvature = self._mul(self._mul(d2phi, z.first[d]), z.first[d])
            second[d] = self._add(curvature, self._mul(dphi, c))
        return _Channels(a, first, second)

    def multiply(self, x: _Channels, y: _Channels) -> _Channels:
        tape = self.tape
        value = tape.mul(x.value, y.value)
        first = {
            d: self._add(self._mul(x.first[d], y.value), self._mul(x.value, y.first[d]))
            for d in x.first
        }
        second = {}
        for d in x.second:
            cross = self._mul(x.first[d], y.first[d])
            terms = [
                self._mul(x.second[d], y.value),
                None if cross is None else tape.scale(cross, 2.0),
                self._mul(x.value, y.second[d]),
            ]
            total = None
            for term in terms:
                total = self._add(total, term)
            second[d] = total
        return _Channels(value, first, second)

    def add(self, x: _Channels, y: _Channels) -> _Channels:
        return _Channels(
            self.tape.add(x.value, y.value),
            {d: self._add(x.first[d], y.first[d]) for d in x.first},
            {d: self._add(x.second[d], y.second[d]) for d in x.second}
        )

    def sub(self, x: _Channels, y: _Channels) -> _Channels:
        def diff(a: Optional[TapeNode], b: Optional[TapeNode]) -> Optional[TapeNode]:
            if b is None:
                return a
            if a is None:
                return self.tape.negate(b)
            return self.tape.sub(a, b)

        return _Channels(
            self.tape.sub(x.value, y.value),
            {d: diff(x.first[d], y.first[d]) for d in x.first},
            {d: diff(x.second[d], y.second[d]) for d in x.second}
        )


# =============================================================================
# Taped network
# =============================================================================

class TapedNetwork:
    """
    Network parameters registered as tape variables.

    Several forward passes (interior, initial, boundary batches) can share
    one TapedNetwork so a single backward pass covers the whole loss.
    """

    def __init__(self, params: NetworkParams, tape: Optional[Tape] = None) -> None:
        self.params = params
        self.config = params.config
        self.tape = tape if tape is not None else Tape()
        self.variables: Dict[str, TapeNode] = {
            name: self.tape.variable(name, array) for name, array in params.named_arrays().items()
        }
        self._ops = _ChannelOps(self.tape)

    @property
    def parameter_names(self) -> List[str]:
        return list(self.variables)

    def _layer(self, k: int) -> Tuple[TapeNode, TapeNode]:
        return self.variables[f"W{k}"], self.variables[f"b{k}"]

    def _dense(self, k: int, h: _Channels) -> _Channels:
        weight, bias = self._layer(k)
        return self._ops.activate(self._ops.linear(h, weight, bias))

    def _check(self, h: _Channels, layer: int) -> None:
        if not h.value.primal.is_finite():
            raise DivergenceError("non-finite hidden output", layer=layer)

    def _product(self, factors: Sequence[_Channels]) -> _Channels:
        result = factors[0]
        for factor in factors[1:]:
            result = self._ops.multiply(result, factor)
        return result

    def _hidden(self, x: _Channels) -> _Channels:
        """Hidden stack H^(L) for the configured architecture."""
        ops = self._ops
        kind = self.config.kind
        depth = self.config.hidden_layers

        if kind is ArchitectureKind.MODIFIED_MLP:
            wu, bu = self.variables["Wu"], self.variables["bu"]
            wv, bv = self.variables["Wv"], self.variables["bv"]
            u_enc = ops.activate(ops.linear(x, wu, bu))
            v_enc = ops.activate(ops.linear(x, wv, bv))
            gap = ops.sub(v_enc, u_enc)
            h = x
            for k in range(1, depth + 1):
                gate = self._dense(k, h)
                # (1 - Z) ⊙ U + Z ⊙ V
                h = ops.add(u_enc, ops.multiply(gate, gap))
                self._check(h, k)
            return h

        h = self._dense(1, x)
        self._check(h, 1)
        hidden = [h]
        activations = [h]
        running: Optional[_Channels] = None
        for k in range(2, depth + 1):
            a = self._dense(k, h)
            basis = hidden if self.config.dm_multiplier == "hidden" else activations
            if kind is ArchitectureKind.VANILLA:
                h = a
            elif kind is ArchitectureKind.RESNET:
                h = ops.add(h, a)
            elif kind is ArchitectureKind.DM:
                # ∏_{i=1}^{k-1} H^(i), extended by one factor per layer
                latest = basis[k - 2]
                running = latest if running is None else ops.multiply(running, latest)
                h = ops.multiply(a, running)
            elif kind is ArchitectureKind.SDM:
                stride = self.config.skip_stride
                members = [basis[i - 1] for i in range(k - 1, 0, -stride)]
                h = ops.add(h, ops.multiply(a, self._product(members)))
            else:
                raise ConfigurationError(f"unsupported architecture {kind}")
            self._check(h, k)
            hidden.append(h)
            activations.append(a)
        return h

    def propagate(self, x: ArrayLike, dims: Iterable[int] = (), second: Iterable[int] = ()) -> _Channels:
        """Run the network on normalized inputs, carrying the requested channels."""
        points = as_array(x)
        if points.ndim != 2 or points.shape[1] != self.config.input_dim:
            raise ConfigurationError(
                f"expected inputs of shape [N x {self.config.input_dim}], got {points.shape}"
            )
        dims = sorted(set(dims) | set(second))
        second = sorted(set(second))
        seed_first: Dict[int, Optional[TapeNode]] = {}
        for d in dims:
            direction = np.zeros_like(points)
            direction[:, d] = 1.0
            seed_first[d] = self.tape.constant(direction)
        seed = _Channels(
            value=self.tape.constant(points),
            first=seed_first,
            second={d: None for d in second}
        )
        h = self._hidden(seed)
        out_w, out_b = self._layer(self.config.hidden_layers + 1)
        out = self._ops.linear(h, out_w, out_b)
        if not out.value.primal.is_finite():
            raise DivergenceError("non-finite network output", layer=self.config.hidden_layers + 1)
        return out

    def forward_with_derivatives(
        self,
        x: ArrayLike,
        directions: Iterable[Direction],
        bounds: Optional[DomainBounds] = None
    ) -> DerivativeBundle:
        """
        Value and requested partials of u at ``x``.

        With ``bounds`` the points are raw coordinates: they are normalized
        first and the chain-rule factor is applied to each derivative
        channel, so reported partials are with respect to raw coordinates.
        """
        directions = _validate_directions(directions, self.config.input_dim)
        points = normalize_inputs(x, bounds).array if bounds is not None else as_array(x)
        first_dims = {d for d, _ in directions}
        second_dims = {d for d, order in directions if order == 2}
        out = self.propagate(points, first_dims, second_dims)

        tape = self.tape
        zeros = None

        def materialize(node: Optional[TapeNode]) -> TapeNode:
            nonlocal zeros
            if node is not None:
                return node
            if zeros is None:
                zeros = tape.constant(np.zeros(out.value.shape))
            return zeros

        bundle = DerivativeBundle(tape=tape, u=out.value, labels=bounds.labels if bounds else ())
        for d, order in sorted(directions):
            channel = materialize(out.first[d] if order == 1 else out.second[d])
            if bounds is not None:
                channel = tape.scale(channel, chain_factor(bounds, d, order))
            if order == 1:
                bundle.first[d] = channel
            else:
                bundle.second[d] = channel
        return bundle


def _validate_directions(directions: Iterable[Direction], input_dim: int) -> Set[Direction]:
    checked = set()
    for dim, order in directions:
        if order not in (1, 2):
            raise ConfigurationError(f"derivative order must be 1 or 2, got {order}")
        if not 0 <= dim < input_dim:
            raise ConfigurationError(f"direction {dim} outside input dimension {input_dim}")
        checked.add((int(dim), int(order)))
    return checked


def forward(params: NetworkParams, x: ArrayLike) -> Tensor:
    """u(x) for normalized inputs x [N × in]."""
    network = TapedNetwork(params)
    return network.propagate(x).value.primal


def forward_with_derivatives(
    params: NetworkParams,
    x: ArrayLike,
    directions: Iterable[Direction],
    bounds: Optional[DomainBounds] = None,
    tape: Optional[Tape] = None
) -> DerivativeBundle:
    """Single-batch convenience wrapper around TapedNetwork.forward_with_derivatives."""
    return TapedNetwork(params, tape).forward_with_derivatives(x, directions, bounds)
