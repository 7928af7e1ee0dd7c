"""
DMPINN Training Loop

Full-batch Adam on a fixed Latin-hypercube sample. Runs are fully
determined by (config, seed): every logged value of the history is
reproduced bitwise on rerun. Wall-clock timing is the one
non-deterministic quantity and is only recorded on request.

Core Technical Features:
- Functional Adam with bias correction
- Iteration-count or wall-clock-budget stopping
- Relative-L2 on the evaluation grid at every logged row
- Optional λ_max checkpoints
- Per-seed output layout (history.csv, params.json, error_field.csv)
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .architectures import NetworkParams, init_network
from .evaluation import EvaluationResult, evaluate_model, evaluation_axes, reference_for
from .hessian import params_lambda_max
from .models import ArchitectureKind, DivergenceError, GradientCheckError, NetworkConfig, RunConfig
from .problems import ProblemSpec, get_problem, loss_and_gradient, loss_components
from .sampling import SampleSet, sample_problem
from .utils import generate_config_hash, read_csv_rows, save_params, write_csv, write_json

logger = logging.getLogger(__name__)

HISTORY_HEADER = ("iter", "loss_total", "loss_r", "loss_ic", "loss_bc", "rel_l2", "lambda_max", "elapsed_ms")
GRADIENT_CHECK_COORDINATES = 20

ProgressFn = Callable[[int, Optional[int], Optional["HistoryRow"]], None]


# =============================================================================
# Adam
# =============================================================================

@dataclass(frozen=True)
class AdamState:
    """Moment accumulators keyed by parameter name."""
    m: Mapping[str, np.ndarray]
    v: Mapping[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: Mapping[str, np.ndarray], **constants: float) -> "AdamState":
        return cls(
            m={name: np.zeros_like(a, dtype=np.float64) for name, a in arrays.items()},
            v={name: np.zeros_like(a, dtype=np.float64) for name, a in arrays.items()},
            **constants
        )


def adam_update(
    arrays: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    iteration: Optional[int] = None
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One Adam step over named arrays; inputs are left untouched."""
    step = state.step + 1
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    updated: Dict[str, np.ndarray] = {}
    m_new: Dict[str, np.ndarray] = {}
    v_new: Dict[str, np.ndarray] = {}
    for name, value in arrays.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}", iteration=iteration)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        updated[name] = value - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        m_new[name] = m
        v_new[name] = v
    next_state = AdamState(m=m_new, v=v_new, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return updated, next_state


def adam_step(
    params: NetworkParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    iteration: Optional[int] = None
) -> Tuple[NetworkParams, AdamState]:
    arrays, next_state = adam_update(params.named_arrays(), grads, state, lr, iteration)
    return NetworkParams.from_named(params.config, arrays), next_state


# =============================================================================
# History
# =============================================================================

@dataclass
class HistoryRow:
    iteration: int
    loss_total: float
    loss_r: float
    loss_ic: float
    loss_bc: float
    rel_l2: Optional[float] = None
    lambda_max: Optional[float] = None
    elapsed_ms: Optional[float] = None

    def values(self) -> Tuple[Any, ...]:
        return (
            self.iteration, self.loss_total, self.loss_r, self.loss_ic, self.loss_bc,
            self.rel_l2, self.lambda_max, self.elapsed_ms
        )


class RunHistory:
    """Logged rows with strictly increasing iteration indices."""

    def __init__(self, rows: Optional[Sequence[HistoryRow]] = None) -> None:
        self.rows: List[HistoryRow] = []
        for row in rows or ():
            self.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: HistoryRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError(
                f"history iterations must increase: {row.iteration} after {self.rows[-1].iteration}"
            )
        self.rows.append(row)

    @property
    def last(self) -> Optional[HistoryRow]:
        return self.rows[-1] if self.rows else None

    def column(self, name: str) -> List[Any]:
        return [getattr(row, name) for row in self.rows]

    def write_csv(self, path: Union[str, Path]) -> Path:
        return write_csv(path, HISTORY_HEADER, (row.values() for row in self.rows))

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "RunHistory":
        def number(text: str) -> Optional[float]:
            return float(text) if text else None

        rows = [
            HistoryRow(
                iteration=int(raw["iter"]),
                loss_total=float(raw["loss_total"]),
                loss_r=float(raw["loss_r"]),
                loss_ic=float(raw["loss_ic"]),
                loss_bc=float(raw["loss_bc"]),
                rel_l2=number(raw["rel_l2"]),
                lambda_max=number(raw["lambda_max"]),
                elapsed_ms=number(raw["elapsed_ms"])
            )
            for raw in read_csv_rows(path)
        ]
        return cls(rows)


# =============================================================================
# Effective configuration
# =============================================================================

def materialize(config: RunConfig) -> RunConfig:
    """
    Fill every optional field from the problem preset.

    An explicit time budget replaces the preset iteration count.
    """
    problem = get_problem(config.problem)
    update: Dict[str, Any] = {}
    if config.architecture is None and not config.architectures:
        update["architecture"] = problem.architecture
    if config.hidden_layers is None:
        update["hidden_layers"] = problem.hidden_layers
    if config.width is None:
        update["width"] = problem.width
    if config.n_interior is None:
        update["n_interior"] = problem.n_interior
    if config.n_initial is None and problem.time_label is not None:
        update["n_initial"] = problem.n_initial
    if config.n_boundary is None:
        update["n_boundary"] = problem.n_boundary
    if config.weights is None:
        update["weights"] = problem.weights
    if config.learning_rate is None:
        update["learning_rate"] = problem.learning_rate
    if config.iterations is None and config.time_budget_s is None:
        update["iterations"] = problem.iterations
    if config.eval_resolution is None:
        update["eval_resolution"] = tuple(len(axis) for axis in evaluation_axes(problem))
    return config.model_copy(update=update)


def problem_for(config: RunConfig) -> ProblemSpec:
    problem = get_problem(config.problem).with_counts(
        n_interior=config.n_interior,
        n_initial=config.n_initial,
        n_boundary=config.n_boundary
    )
    return problem.with_overrides(weights=config.weights)


def network_for(config: RunConfig, problem: ProblemSpec, kind: Optional[ArchitectureKind] = None) -> NetworkConfig:
    return problem.network_config(
        kind=kind or config.architecture,
        hidden_layers=config.hidden_layers,
        width=config.width,
        dm_multiplier=config.dm_multiplier,
        skip_stride=config.skip_stride
    )


# =============================================================================
# Training
# =============================================================================

@dataclass
class TrainingResult:
    seed: int
    kind: ArchitectureKind
    learning_rate: float
    params: NetworkParams
    history: RunHistory
    iterations: int
    diverged: bool = False
    error: Optional[str] = None
    evaluation: Optional[EvaluationResult] = None
    wall_ms_per_iter: Optional[float] = None

    @property
    def rel_l2(self) -> Optional[float]:
        return None if self.evaluation is None else self.evaluation.rel_l2

    @property
    def abs_l2(self) -> Optional[float]:
        return None if self.evaluation is None else self.evaluation.abs_l2


def check_gradient(
    problem: ProblemSpec,
    params: NetworkParams,
    samples: SampleSet,
    grads: Mapping[str, np.ndarray],
    coordinates: int = GRADIENT_CHECK_COORDINATES,
    seed: int = 0,
    eps: float = 1e-5,
    rtol: float = 1e-6,
    atol: float = 1e-8
) -> float:
    """
    Spot-check tape gradients against central differences of L_total.

    Coordinates are drawn without replacement from the flattened θ. A
    coordinate passes when |tape - fd| <= rtol·max(|tape|, |fd|) plus a
    cancellation floor of atol·max(1, |L_total|).

    Returns:
        Worst relative error over the checked coordinates

    Raises:
        GradientCheckError: first coordinate outside the tolerance
    """
    named = params.named_arrays()
    names = list(named)
    offsets = np.cumsum([0] + [named[name].size for name in names])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(int(offsets[-1]), size=min(coordinates, int(offsets[-1])), replace=False))

    def total(candidate: NetworkParams) -> float:
        return loss_components(problem, candidate, samples).l_total

    floor = atol * max(1.0, abs(total(params)))
    worst = 0.0
    for flat_index in picks:
        slot = int(np.searchsorted(offsets, flat_index, side="right")) - 1
        name = names[slot]
        index = tuple(int(i) for i in np.unravel_index(int(flat_index - offsets[slot]), named[name].shape))
        plus, minus = named[name].copy(), named[name].copy()
        plus[index] += eps
        minus[index] -= eps
        fd = (total(params.replace({name: plus})) - total(params.replace({name: minus}))) / (2.0 * eps)
        taped = float(np.asarray(grads[name])[index])
        error = abs(taped - fd)
        if not error <= rtol * max(abs(taped), abs(fd)) + floor:
            raise GradientCheckError("gradient check failed", name=name, index=index, tape=taped, fd=fd)
        worst = max(worst, error / max(abs(taped), abs(fd), floor))

    logger.debug(f"Gradient check passed on {len(picks)} coordinates (worst relative error {worst:.2e})")
    return worst


def train(
    config: RunConfig,
    seed: Optional[int] = None,
    kind: Optional[ArchitectureKind] = None,
    learning_rate: Optional[float] = None,
    lambda_stride: Optional[int] = None,
    progress: Optional[ProgressFn] = None
) -> TrainingResult:
    """
    Train one network for one seed.

    Technical Implementation:
    - init_network and sample_problem seeded by ``seed``
    - loss_and_gradient -> adam_step at a constant learning rate
    - tape gradient spot-checked against central differences at iteration 0
    - a row at every ``log_every`` multiple, every λ_max checkpoint and
      the final iteration (0 iterations gives one row)
    - divergence ends the run with the partial history and the flag set
    """
    config = materialize(config)
    seed = config.seeds[0] if seed is None else seed
    problem = problem_for(config)
    kind = kind or config.architecture or problem.architecture
    lr = learning_rate if learning_rate is not None else config.learning_rate
    stride = config.lambda_max_stride if lambda_stride is None else lambda_stride
    budget = config.time_budget_s
    total = config.iterations

    params = init_network(network_for(config, problem, kind), seed)
    samples = sample_problem(problem, seed)
    reference = reference_for(problem, config.eval_resolution)
    state = AdamState.zeros_like(params.named_arrays())
    history = RunHistory()

    logger.info(
        f"Training {kind.value} on {problem.name.value} (seed={seed}, lr={lr}, "
        f"{'iterations=' + str(total) if budget is None else f'budget={budget}s'})"
    )

    started = time.perf_counter()
    iteration = 0
    diverged = False
    error: Optional[str] = None
    evaluation: Optional[EvaluationResult] = None

    while True:
        elapsed = time.perf_counter() - started
        final = (total is not None and iteration >= total) or (budget is not None and elapsed >= budget)
        try:
            loss, grads = loss_and_gradient(problem, params, samples, iteration=iteration)
        except DivergenceError as e:
            diverged = True
            error = str(e)
            logger.error(f"{kind.value} seed={seed} diverged at iteration {iteration}: {e}")
            break

        if iteration == 0:
            check_gradient(problem, params, samples, grads, seed=seed)

        checkpoint = stride > 0 and iteration % stride == 0
        if final or checkpoint or iteration % config.log_every == 0:
            evaluation = evaluate_model(params, problem, reference=reference)
            row = HistoryRow(
                iteration=iteration,
                rel_l2=evaluation.rel_l2,
                lambda_max=params_lambda_max(problem, params, samples, seed=seed).value if checkpoint else None,
                elapsed_ms=elapsed * 1000.0 if config.record_timing else None,
                **loss.as_dict()
            )
            history.append(row)
            logger.info(
                f"iter={iteration} loss={row.loss_total:.4e} rel_l2={row.rel_l2:.4e}"
                + (f" lambda_max={row.lambda_max:.4e}" if row.lambda_max is not None else "")
            )
            if progress is not None:
                progress(iteration, total, row)
        elif progress is not None:
            progress(iteration, total, None)

        if final:
            break
        try:
            params, state = adam_step(params, grads, state, lr, iteration=iteration)
        except DivergenceError as e:
            diverged = True
            error = str(e)
            logger.error(f"{kind.value} seed={seed} diverged at iteration {iteration}: {e}")
            break
        iteration += 1

    wall_ms = None
    if config.record_timing:
        wall_ms = (time.perf_counter() - started) * 1000.0 / max(iteration, 1)

    return TrainingResult(
        seed=seed,
        kind=kind,
        learning_rate=lr,
        params=params,
        history=history,
        iterations=iteration,
        diverged=diverged,
        error=error,
        evaluation=None if diverged else evaluation,
        wall_ms_per_iter=wall_ms
    )


# =============================================================================
# Multi-seed runs and outputs
# =============================================================================

@dataclass(frozen=True)
class RunRecord:
    """Per-seed entry of summary.json."""
    seed: int
    rel_l2: Optional[float]
    abs_l2: Optional[float]
    diverged: bool
    iterations: int
    wall_ms_per_iter: Optional[float] = None

    @classmethod
    def from_result(cls, result: TrainingResult) -> "RunRecord":
        return cls(
            seed=result.seed,
            rel_l2=result.rel_l2,
            abs_l2=result.abs_l2,
            diverged=result.diverged,
            iterations=result.iterations,
            wall_ms_per_iter=result.wall_ms_per_iter
        )

    def as_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "rel_l2": self.rel_l2,
            "abs_l2": self.abs_l2,
            "diverged": self.diverged,
            "iterations": self.iterations,
            "wall_ms_per_iter": self.wall_ms_per_iter
        }


def write_run_outputs(result: TrainingResult, directory: Union[str, Path]) -> Path:
    """``seed_<s>/history.csv``, ``params.json`` and (when evaluated) ``error_field.csv``."""
    seed_dir = Path(directory) / f"seed_{result.seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    result.history.write_csv(seed_dir / "history.csv")
    if result.params.is_finite():
        save_params(seed_dir / "params.json", result.params)
    if result.evaluation is not None:
        result.evaluation.export_csv(seed_dir / "error_field.csv")
    return seed_dir


def execute_run(
    config: RunConfig,
    seed: int,
    kind: ArchitectureKind,
    learning_rate: float,
    directory: Optional[str] = None
) -> RunRecord:
    """Train one (architecture, lr, seed) cell and persist its outputs; process-pool safe."""
    result = train(config, seed=seed, kind=kind, learning_rate=learning_rate)
    if directory is not None:
        write_run_outputs(result, directory)
    return RunRecord.from_result(result)


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    if not finite or len(finite) != len(values):
        return None
    return float(sum(finite) / len(finite))


@dataclass
class RunSummary:
    """Seeds of one (architecture, learning rate) cell."""
    config: RunConfig
    kind: ArchitectureKind
    learning_rate: float
    records: List[RunRecord] = field(default_factory=list)

    @property
    def mean_rel_l2(self) -> Optional[float]:
        return _mean([r.rel_l2 for r in self.records])

    @property
    def mean_abs_l2(self) -> Optional[float]:
        return _mean([r.abs_l2 for r in self.records])

    @property
    def wall_ms_per_iter(self) -> Optional[float]:
        return _mean([r.wall_ms_per_iter for r in self.records])

    @property
    def diverged_runs(self) -> int:
        return sum(1 for r in self.records if r.diverged)

    def effective_config(self) -> RunConfig:
        return self.config.model_copy(update={
            "architecture": self.kind,
            "architectures": None,
            "learning_rate": self.learning_rate,
            "learning_rates": None
        })

    def to_json(self) -> Dict[str, Any]:
        echo = self.effective_config().echo()
        return {
            "config": echo,
            "config_hash": generate_config_hash(echo),
            "runs": [record.as_dict() for record in self.records],
            "mean_rel_l2": self.mean_rel_l2,
            "mean_abs_l2": self.mean_abs_l2
        }

    def write(self, directory: Union[str, Path]) -> Path:
        return write_json(Path(directory) / "summary.json", self.to_json())


def run_seeds(
    config: RunConfig,
    kind: Optional[ArchitectureKind] = None,
    learning_rate: Optional[float] = None,
    directory: Optional[Union[str, Path]] = None,
    workers: int = 1,
    on_record: Optional[Callable[[RunRecord], None]] = None
) -> RunSummary:
    """
    Train every configured seed and summarize.

    With ``workers > 1`` seeds run in a process pool; records are
    collected in seed order so outputs do not depend on scheduling.
    """
    config = materialize(config)
    kind = kind or config.architecture
    lr = learning_rate if learning_rate is not None else config.learning_rate
    target = None if directory is None else str(directory)
    records: List[RunRecord] = []

    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(execute_run, config, seed, kind, lr, target) for seed in config.seeds]
            for future in futures:
                record = future.result()
                records.append(record)
                if on_record is not None:
                    on_record(record)
    else:
        for seed in config.seeds:
            record = execute_run(config, seed, kind, lr, target)
            records.append(record)
            if on_record is not None:
                on_record(record)

    summary = RunSummary(config=config, kind=kind, learning_rate=lr, records=records)
    if directory is not None:
        summary.write(directory)
    logger.info(
        f"{kind.value} lr={lr}: mean rel_l2 over {len(records)} seeds = {summary.mean_rel_l2}"
    )
    return summary
