"""
DMPINN: densely multiplied physics-informed neural network laboratory

Tape-based PINN training for five architectures on four benchmark PDEs,
with reference oracles, error metrics and Hessian stiffness diagnostics.
"""

__version__ = "1.0.0"

from .models import (
    ArchitectureKind, ProblemName, Provenance, NetworkConfig, LossWeights, RunConfig,
    ValidationError, DMPinnError, TapeError, BackwardError, DivergenceError,
    ConfigurationError, OracleConvergenceError, ManifestMismatchError, GradientCheckError
)
from .tape import Tape, TapeNode, Tensor, GradMap, OpKind
from .sampling import DomainBounds, SampleSet, latin_hypercube, sample_problem
from .architectures import (
    NetworkParams, DerivativeBundle, TapedNetwork, init_network, param_count,
    forward, forward_with_derivatives, normalize_inputs, chain_factor
)
from .problems import (
    ProblemSpec, LossBreakdown, problem_presets, get_problem, source_q,
    pde_residual, loss_components, loss_and_gradient
)
from .evaluation import (
    ReferenceGrid, EvaluationResult, relative_l2, absolute_l2, reference_convection,
    reference_helmholtz, reference_burgers, reference_allen_cahn, etdrk4_periodic,
    evaluate_model, reference_for
)
from .hessian import FlatParams, EigenEstimate, hvp, lambda_max, track_lambda_max
from .training import (
    AdamState, HistoryRow, RunHistory, TrainingResult, RunSummary, adam_step, check_gradient,
    materialize, train, run_seeds
)
from .utils import setup_logging, load_run_config, validate_run_config, generate_config_hash

__all__ = [
    # Configuration and errors
    "ArchitectureKind", "ProblemName", "Provenance", "NetworkConfig", "LossWeights",
    "RunConfig", "ValidationError", "DMPinnError", "TapeError", "BackwardError",
    "DivergenceError", "ConfigurationError", "OracleConvergenceError", "ManifestMismatchError",
    "GradientCheckError",

    # Tape engine
    "Tape", "TapeNode", "Tensor", "GradMap", "OpKind",

    # Sampling and networks
    "DomainBounds", "SampleSet", "latin_hypercube", "sample_problem",
    "NetworkParams", "DerivativeBundle", "TapedNetwork", "init_network", "param_count",
    "forward", "forward_with_derivatives", "normalize_inputs", "chain_factor",

    # Problems and evaluation
    "ProblemSpec", "LossBreakdown", "problem_presets", "get_problem", "source_q",
    "pde_residual", "loss_components", "loss_and_gradient",
    "ReferenceGrid", "EvaluationResult", "relative_l2", "absolute_l2",
    "reference_convection", "reference_helmholtz", "reference_burgers",
    "reference_allen_cahn", "etdrk4_periodic", "evaluate_model", "reference_for",

    # Training and diagnostics
    "FlatParams", "EigenEstimate", "hvp", "lambda_max", "track_lambda_max",
    "AdamState", "HistoryRow", "RunHistory", "TrainingResult", "RunSummary",
    "adam_step", "materialize", "train", "run_seeds",

    # Utilities
    "setup_logging", "load_run_config", "validate_run_config", "generate_config_hash",
]
