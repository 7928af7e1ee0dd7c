"""
DMPINN Hessian Diagnostics

Largest-magnitude eigenvalue of the loss Hessian by power iteration on
Hessian-vector products. Each product is a central difference of two
reverse-mode gradients, so the tape stays first order.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple, Union

import numpy as np

from .architectures import NetworkParams
from .models import ArchitectureKind, DivergenceError, NetworkConfig, RunConfig
from .problems import ProblemSpec, loss_and_gradient
from .sampling import SampleSet

if TYPE_CHECKING:
    from .training import TrainingResult

logger = logging.getLogger(__name__)

GradientFn = Callable[[np.ndarray], np.ndarray]
Vector = Union["FlatParams", np.ndarray]

DEFAULT_TRACK_STRIDE = 500


@dataclass(frozen=True)
class FlatParams:
    """θ as one vector plus the (name, shape) manifest to rebuild the layers."""
    vector: np.ndarray
    manifest: Tuple[Tuple[str, Tuple[int, ...]], ...]
    config: NetworkConfig

    @classmethod
    def flatten(cls, params: NetworkParams) -> "FlatParams":
        named = params.named_arrays()
        vector = np.concatenate([array.reshape(-1) for array in named.values()])
        manifest = tuple((name, tuple(array.shape)) for name, array in named.items())
        return cls(vector=vector, manifest=manifest, config=params.config)

    def unflatten(self) -> NetworkParams:
        arrays = {}
        offset = 0
        for name, shape in self.manifest:
            size = int(np.prod(shape, dtype=np.int64))
            arrays[name] = self.vector[offset:offset + size].reshape(shape)
            offset += size
        return NetworkParams.from_named(self.config, arrays)

    def with_vector(self, vector: np.ndarray) -> "FlatParams":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != self.vector.shape:
            raise ValueError(f"vector of shape {vector.shape} does not match {self.vector.shape}")
        return FlatParams(vector=vector, manifest=self.manifest, config=self.config)

    @property
    def size(self) -> int:
        return int(self.vector.size)


def _as_vector(theta: Vector) -> np.ndarray:
    if isinstance(theta, FlatParams):
        return theta.vector
    return np.asarray(theta, dtype=np.float64)


def make_gradient_evaluator(problem: ProblemSpec, samples: SampleSet, template: FlatParams) -> GradientFn:
    """θ vector -> ∇L_total(θ) vector on a fixed sample."""

    def gradient(vector: np.ndarray) -> np.ndarray:
        params = template.with_vector(vector).unflatten()
        _, grads = loss_and_gradient(problem, params, samples)
        return np.concatenate([grads[name].reshape(-1) for name, _ in template.manifest])

    return gradient


def hvp(grad_fn: GradientFn, theta: Vector, v: np.ndarray, eps: Optional[float] = None) -> np.ndarray:
    """
    Hessian-vector product (∇L(θ+εv) − ∇L(θ−εv)) / 2ε.

    Args:
        grad_fn: gradient evaluator
        theta: expansion point
        v: direction, ‖v‖ > 0
        eps: step; default 1e-4·(1+‖θ‖)/‖v‖
    """
    theta = _as_vector(theta)
    v = np.asarray(v, dtype=np.float64)
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        raise ValueError("hvp direction must be non-zero")
    if eps is None:
        eps = 1e-4 * (1.0 + float(np.linalg.norm(theta))) / v_norm
    if eps <= 0:
        raise ValueError(f"hvp step must be positive, got {eps}")
    plus = np.asarray(grad_fn(theta + eps * v), dtype=np.float64)
    minus = np.asarray(grad_fn(theta - eps * v), dtype=np.float64)
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        raise DivergenceError("non-finite gradient inside Hessian-vector product")
    return (plus - minus) / (2.0 * eps)


@dataclass
class EigenEstimate:
    """Dominant Hessian eigenvalue magnitude with the Rayleigh-quotient trace."""
    value: float
    iterations: int
    degenerate: bool = False
    converged: bool = False
    history: List[float] = field(default_factory=list)

    def __float__(self) -> float:
        return self.value


def lambda_max(
    grad_fn: GradientFn,
    theta: Vector,
    max_iters: int = 100,
    tol: float = 1e-3,
    seed: int = 0,
    eps: Optional[float] = None
) -> EigenEstimate:
    """
    Power iteration v <- Hv/‖Hv‖ from a seeded random unit vector.

    Stops once the Rayleigh quotient changes by less than ``tol``
    relatively. A vanishing Hv reports 0 with the degenerate flag set.
    """
    theta = _as_vector(theta)
    if not np.all(np.isfinite(theta)):
        raise DivergenceError("lambda_max needs finite parameters")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(theta.size)
    v /= np.linalg.norm(v)

    history: List[float] = []
    previous: Optional[float] = None
    for iteration in range(1, max_iters + 1):
        hv = hvp(grad_fn, theta, v, eps)
        norm = float(np.linalg.norm(hv))
        if norm == 0.0 or not math.isfinite(norm):
            logger.warning(f"Hessian-vector product collapsed at power iteration {iteration}")
            return EigenEstimate(value=0.0, iterations=iteration, degenerate=True, history=history)
        quotient = float(v @ hv)
        history.append(quotient)
        v = hv / norm
        if previous is not None and abs(quotient - previous) <= tol * abs(quotient):
            logger.debug(f"Power iteration converged after {iteration} steps: {quotient:.6e}")
            return EigenEstimate(abs(quotient), iteration, converged=True, history=history)
        previous = quotient

    logger.debug(f"Power iteration stopped at max_iters={max_iters}")
    return EigenEstimate(abs(history[-1]), max_iters, history=history)


def params_lambda_max(
    problem: ProblemSpec,
    params: NetworkParams,
    samples: SampleSet,
    max_iters: int = 100,
    tol: float = 1e-3,
    seed: int = 0
) -> EigenEstimate:
    """λ_max of the training loss at ``params``."""
    flat = FlatParams.flatten(params)
    grad_fn = make_gradient_evaluator(problem, samples, flat)
    return lambda_max(grad_fn, flat, max_iters=max_iters, tol=tol, seed=seed)


@dataclass
class LambdaSeries:
    kind: ArchitectureKind
    seed: int
    points: List[Tuple[int, float]]
    result: "TrainingResult"


def track_lambda_max(
    config: RunConfig,
    stride: int = DEFAULT_TRACK_STRIDE,
    seed: Optional[int] = None,
    kind: Optional[ArchitectureKind] = None,
    progress: Optional[Callable] = None
) -> LambdaSeries:
    """
    Train once, computing λ_max every ``stride`` iterations.

    The estimates land in the run history's lambda_max column; the
    returned series holds the (iteration, λ_max) pairs.
    """
    from .training import materialize, train

    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    effective = materialize(config)
    seed = effective.seeds[0] if seed is None else seed
    result = train(effective, seed=seed, kind=kind, lambda_stride=stride, progress=progress)
    points = [
        (row.iteration, row.lambda_max)
        for row in result.history.rows
        if row.lambda_max is not None
    ]
    logger.info(f"Tracked {len(points)} lambda_max checkpoints for {result.kind.value} (seed={seed})")
    return LambdaSeries(kind=result.kind, seed=seed, points=points, result=result)
