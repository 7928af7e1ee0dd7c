"""
DMPINN Training Point Sampling

Deterministic Latin-hypercube generation of interior, initial and
boundary training points. Samples are drawn once per seed and held fixed
for the whole run.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .models import ConfigurationError
from .utils import write_csv

if TYPE_CHECKING:
    from .problems import ProblemSpec

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]


@dataclass(frozen=True)
class DomainBounds:
    """Per-dimension (lo, hi) intervals with coordinate labels."""
    labels: Tuple[str, ...]
    lows: Tuple[float, ...]
    highs: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.labels) == len(self.lows) == len(self.highs)):
            raise ConfigurationError("bounds need one (lo, hi) pair per label")
        for label, lo, hi in zip(self.labels, self.lows, self.highs):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigurationError(f"bounds for '{label}' must be finite")
            if not lo < hi:
                raise ConfigurationError(f"bounds for '{label}' need lo < hi, got ({lo}, {hi})")

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[str, float, float]]) -> "DomainBounds":
        return cls(
            labels=tuple(label for label, _, _ in pairs),
            lows=tuple(float(lo) for _, lo, _ in pairs),
            highs=tuple(float(hi) for _, _, hi in pairs)
        )

    @property
    def dims(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(f"unknown coordinate label '{label}'") from None

    def interval(self, label: str) -> Tuple[float, float]:
        i = self.index(label)
        return self.lows[i], self.highs[i]

    def subset(self, labels: Sequence[str]) -> "DomainBounds":
        return DomainBounds.from_pairs([(label, *self.interval(label)) for label in labels])

    def contains(self, points: np.ndarray) -> bool:
        points = np.asarray(points, dtype=np.float64)
        lows = np.asarray(self.lows)
        highs = np.asarray(self.highs)
        return bool(np.all((points >= lows) & (points <= highs)))


@dataclass
class SampleSet:
    """Training points of one problem: interior, initial slice, boundary faces."""
    labels: Tuple[str, ...]
    interior: np.ndarray
    initial: Optional[np.ndarray] = None
    boundary: Dict[str, np.ndarray] = field(default_factory=dict)
    periodic: bool = False

    def counts(self) -> Dict[str, int]:
        return {
            "interior": int(self.interior.shape[0]),
            "initial": 0 if self.initial is None else int(self.initial.shape[0]),
            "boundary": int(sum(face.shape[0] for face in self.boundary.values()))
        }

    def iter_sets(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield "interior", self.interior
        if self.initial is not None:
            yield "initial", self.initial
        for face, points in self.boundary.items():
            yield f"boundary_{face}", points

    def export_csv(self, directory: Union[str, Path]) -> List[Path]:
        """One CSV per point set, headed by the coordinate labels."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = [
            write_csv(directory / f"{name}.csv", self.labels, points.tolist())
            for name, points in self.iter_sets()
        ]
        logger.info(f"Exported {len(written)} sample files to {directory}")
        return written


def _generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def latin_hypercube(n: int, bounds: DomainBounds, seed: SeedLike) -> np.ndarray:
    """
    Latin-hypercube sample of ``n`` points inside ``bounds``.

    Every dimension is split into ``n`` equal strata; each stratum receives
    exactly one point, uniform inside the stratum, with strata assigned by
    a seeded permutation.
    """
    if n < 1:
        raise ConfigurationError(f"latin_hypercube needs n >= 1, got {n}")
    rng = _generator(seed)
    columns = []
    for lo, hi in zip(bounds.lows, bounds.highs):
        strata = rng.permutation(n)
        offsets = rng.random(n)
        columns.append(lo + (hi - lo) * (strata + offsets) / n)
    return np.column_stack(columns)


def _split(total: int, parts: int) -> List[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _on_face(shared: np.ndarray, bounds: DomainBounds, label: str, value: float) -> np.ndarray:
    """Insert the fixed coordinate ``label = value`` into points over the other dims."""
    position = bounds.index(label)
    return np.insert(shared, position, value, axis=1)


def sample_problem(problem: "ProblemSpec", seed: SeedLike) -> SampleSet:
    """
    Draw the fixed training sample of a benchmark problem.

    Technical Implementation:
    - interior: LHS over the whole space-time domain
    - initial: LHS over the spatial dims on the t = t0 slice
    - periodic faces: matched pairs sharing every other coordinate bitwise
    - Dirichlet faces: independent LHS draws, split evenly across faces
    """
    rng = _generator(seed)
    bounds = problem.bounds
    interior = latin_hypercube(problem.n_interior, bounds, rng)

    initial = None
    if problem.time_label is not None and problem.n_initial > 0:
        spatial = [label for label in bounds.labels if label != problem.time_label]
        slice_points = latin_hypercube(problem.n_initial, bounds.subset(spatial), rng)
        t0, _ = bounds.interval(problem.time_label)
        initial = _on_face(slice_points, bounds, problem.time_label, t0)

    boundary: Dict[str, np.ndarray] = {}
    if problem.periodic:
        (label,) = problem.boundary_labels
        others = bounds.subset([l for l in bounds.labels if l != label])
        shared = latin_hypercube(max(problem.n_boundary // 2, 1), others, rng)
        lo, hi = bounds.interval(label)
        boundary[f"{label}_lo"] = _on_face(shared, bounds, label, lo)
        boundary[f"{label}_hi"] = _on_face(shared, bounds, label, hi)
    else:
        faces = [(label, side) for label in problem.boundary_labels for side in ("lo", "hi")]
        for (label, side), count in zip(faces, _split(problem.n_boundary, len(faces))):
            others = bounds.subset([l for l in bounds.labels if l != label])
            lo, hi = bounds.interval(label)
            points = latin_hypercube(max(count, 1), others, rng)
            boundary[f"{label}_{side}"] = _on_face(points, bounds, label, lo if side == "lo" else hi)

    samples = SampleSet(
        labels=bounds.labels,
        interior=interior,
        initial=initial,
        boundary=boundary,
        periodic=problem.periodic
    )
    logger.debug(f"Sampled {problem.name.value} (seed={seed if isinstance(seed, int) else 'rng'}): {samples.counts()}")
    return samples
