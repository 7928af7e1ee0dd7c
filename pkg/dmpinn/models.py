"""
DMPINN Data Models

Shared enumerations, pydantic configuration models and the error types
used across the training laboratory.

These models enforce structural validation and type safety for:
- Network architecture descriptors
- Run configurations loaded from JSON/YAML presets
- Field-level validation reporting for the CLI
"""

from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ArchitectureKind(str, Enum):
    """Network architectures compared by the laboratory."""
    VANILLA = "Vanilla"
    RESNET = "ResNet"
    MODIFIED_MLP = "ModifiedMLP"
    DM = "DM"
    SDM = "SDM"

    @property
    def requires_uniform_width(self) -> bool:
        return self in (ArchitectureKind.RESNET, ArchitectureKind.DM, ArchitectureKind.SDM)


class ProblemName(str, Enum):
    """Benchmark PDEs."""
    ALLAN_CAHN = "AllanCahn"
    HELMHOLTZ = "Helmholtz"
    BURGERS = "Burgers"
    CONVECTION = "Convection"


class Provenance(str, Enum):
    """Where a reference field comes from."""
    ANALYTIC = "analytic"
    COLE_HOPF = "cole-hopf"
    SPECTRAL = "spectral"


# =============================================================================
# Error types
# =============================================================================

class DMPinnError(Exception):
    """Base class for every error raised by the laboratory."""


class TapeError(DMPinnError):
    """Shape mismatch detected while recording a tape operation."""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], message: str = "") -> None:
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        detail = message or "incompatible operand shapes"
        super().__init__(f"{op}: {detail} {self.shapes}")


class BackwardError(DMPinnError):
    """Invalid reverse-mode request."""


class DivergenceError(DMPinnError):
    """Non-finite value produced during forward evaluation or training."""

    def __init__(
        self,
        message: str,
        layer: Optional[int] = None,
        iteration: Optional[int] = None
    ) -> None:
        self.layer = layer
        self.iteration = iteration
        location = []
        if layer is not None:
            location.append(f"layer={layer}")
        if iteration is not None:
            location.append(f"iteration={iteration}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class GradientCheckError(DMPinnError):
    """Tape gradient disagrees with central differences of the loss."""

    def __init__(
        self,
        message: str,
        name: Optional[str] = None,
        index: Optional[Tuple[int, ...]] = None,
        tape: Optional[float] = None,
        fd: Optional[float] = None
    ) -> None:
        self.name = name
        self.index = index
        self.tape = tape
        self.fd = fd
        suffix = f" at {name}{list(index)}: tape={tape:.9e}, fd={fd:.9e}" if name is not None else ""
        super().__init__(f"{message}{suffix}")


class ConfigurationError(DMPinnError):
    """Invalid configuration or missing ingredient for a computation."""

    def __init__(self, message: str, issues: Optional[List["ValidationError"]] = None) -> None:
        self.issues = list(issues or [])
        super().__init__(message)


class OracleConvergenceError(DMPinnError):
    """A reference oracle failed its refinement gate."""

    def __init__(self, message: str, cell: Optional[Tuple[float, float]] = None) -> None:
        self.cell = cell
        suffix = f" at cell {cell}" if cell is not None else ""
        super().__init__(f"{message}{suffix}")


class ManifestMismatchError(DMPinnError):
    """Parameter file shapes disagree with the expected network layout."""

    def __init__(
        self,
        expected: Dict[str, Tuple[int, ...]],
        found: Dict[str, Tuple[int, ...]]
    ) -> None:
        self.expected = expected
        self.found = found
        differing = sorted(
            name for name in set(expected) | set(found)
            if expected.get(name) != found.get(name)
        )
        lines = [
            f"{name}: expected {expected.get(name)}, found {found.get(name)}"
            for name in differing
        ]
        super().__init__("parameter manifest mismatch; " + "; ".join(lines))


# =============================================================================
# Configuration models
# =============================================================================

class ValidationError(BaseModel):
    """Structured validation error reporting."""
    field: str
    message: str
    value: Optional[Union[str, int, float, bool]] = None
    severity: Literal["warning", "error", "critical"] = "error"

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


class NetworkConfig(BaseModel):
    """Architecture descriptor: kind, dimensions and variant switches."""
    model_config = ConfigDict(use_enum_values=False, frozen=True)

    kind: ArchitectureKind
    input_dim: int = Field(ge=1)
    hidden_layers: int = Field(ge=1)
    width: int = Field(ge=1)
    output_dim: int = Field(default=1, ge=1)
    activation: Literal["tanh"] = "tanh"
    # dense product multiplies post-product hidden outputs, or raw activations
    dm_multiplier: Literal["hidden", "activation"] = "hidden"
    skip_stride: int = Field(default=2, ge=1)

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(out, in) of every dense layer, output layer last."""
        shapes = [(self.width, self.input_dim)]
        shapes.extend((self.width, self.width) for _ in range(self.hidden_layers - 1))
        shapes.append((self.output_dim, self.width))
        return shapes

    def encoder_shapes(self) -> List[Tuple[int, int]]:
        if self.kind is ArchitectureKind.MODIFIED_MLP:
            return [(self.width, self.input_dim), (self.width, self.input_dim)]
        return []


class LossWeights(BaseModel):
    """Loss weights λ_r, λ_ic, λ_bc."""
    model_config = ConfigDict(frozen=True)

    r: float = Field(default=1.0, gt=0.0)
    ic: float = Field(default=1.0, gt=0.0)
    bc: float = Field(default=1.0, gt=0.0)


class RunConfig(BaseModel):
    """
    One training/comparison run as read from a preset file.

    Optional fields fall back to the problem preset when the config is
    materialized; see ``training.materialize``.
    """
    model_config = ConfigDict(extra="forbid")

    problem: ProblemName
    architecture: Optional[ArchitectureKind] = None
    architectures: Optional[List[ArchitectureKind]] = None
    hidden_layers: Optional[int] = Field(default=None, ge=1)
    width: Optional[int] = Field(default=None, ge=1)
    dm_multiplier: Literal["hidden", "activation"] = "hidden"
    skip_stride: int = Field(default=2, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    n_interior: Optional[int] = Field(default=None, ge=1)
    n_initial: Optional[int] = Field(default=None, ge=1)
    n_boundary: Optional[int] = Field(default=None, ge=1)
    weights: Optional[LossWeights] = None
    learning_rate: Optional[float] = Field(default=None, gt=0.0)
    learning_rates: Optional[List[float]] = None
    iterations: Optional[int] = Field(default=None, ge=0)
    time_budget_s: Optional[float] = Field(default=None, gt=0.0)
    eval_resolution: Optional[Tuple[int, int]] = None
    lambda_max_stride: int = Field(default=0, ge=0)
    log_every: int = Field(default=100, ge=1)
    output_dir: str = "runs"
    record_timing: bool = False

    @field_validator("seeds")
    @classmethod
    def _seeds_present(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        if any(seed < 0 for seed in seeds):
            raise ValueError("seeds must be non-negative")
        return seeds

    @field_validator("learning_rates")
    @classmethod
    def _rates_positive(cls, rates: Optional[List[float]]) -> Optional[List[float]]:
        if rates is not None and (not rates or any(rate <= 0 for rate in rates)):
            raise ValueError("learning_rates must be a non-empty list of positive values")
        return rates

    @field_validator("eval_resolution")
    @classmethod
    def _resolution_positive(cls, value: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if value is not None and min(value) < 2:
            raise ValueError("eval_resolution entries must be at least 2")
        return value

    @model_validator(mode="after")
    def _single_stop_criterion(self) -> "RunConfig":
        if self.iterations is not None and self.time_budget_s is not None:
            raise ValueError("set either iterations or time_budget_s, not both")
        return self

    def echo(self) -> Dict[str, Any]:
        """JSON-ready dump used by summary files."""
        return self.model_dump(mode="json")
