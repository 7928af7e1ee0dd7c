"""
DMPINN Test Configuration - Shared Fixtures
===========================================

Centralized fixtures for the laboratory test-suite.

Technical Architecture:
- Reduced problem profiles (few points, tiny networks) for fast checks
- Run-config builders writing JSON/YAML files into tmp_path
- Session-level output root so nothing lands in the working tree
- Marker registration mirrored from pytest.ini
"""

import json
import os
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import pytest
import yaml

from dmpinn.models import ArchitectureKind, NetworkConfig, ProblemName
from dmpinn.problems import ProblemSpec, get_problem

ALL_KINDS = list(ArchitectureKind)
ALL_PROBLEMS = list(ProblemName)


def pytest_configure(config):
    """Register the laboratory's custom markers."""
    config.addinivalue_line("markers", "unit: fast isolated tests of one module")
    config.addinivalue_line("markers", "integration: end-to-end training and output pipeline tests")
    config.addinivalue_line("markers", "cli: command-line interface tests")
    config.addinivalue_line("markers", "slow: tests that take significant time to execute")
    config.addinivalue_line("markers", "reproduction: long benchmark reproductions (set DMPINN_RUN_REPRODUCTION=1)")


# =============================================================================
# Session-Level Configuration
# =============================================================================

@pytest.fixture(scope="session", autouse=True)
def output_root(tmp_path_factory) -> Path:
    """Route default output directories into a session temp dir."""
    root = tmp_path_factory.mktemp("dmpinn_runs")
    previous = os.environ.get("DMPINN_OUTPUT_ROOT")
    os.environ["DMPINN_OUTPUT_ROOT"] = str(root)
    yield root
    if previous is None:
        os.environ.pop("DMPINN_OUTPUT_ROOT", None)
    else:
        os.environ["DMPINN_OUTPUT_ROOT"] = previous


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


# =============================================================================
# Problem and Network Fixtures
# =============================================================================

@pytest.fixture
def small_problem() -> Callable[[ProblemName], ProblemSpec]:
    """
    Preset problem with a handful of points.

    Technical Implementation:
    - interior 12, initial 6, boundary 8 (4 periodic pairs / 2 per edge)
    - constants and weights untouched
    """
    def build(name: ProblemName) -> ProblemSpec:
        return get_problem(name).with_counts(n_interior=12, n_initial=6, n_boundary=8)

    return build


@pytest.fixture
def tiny_network() -> Callable[..., NetworkConfig]:
    """NetworkConfig factory for derivative and gradient checks."""
    def build(
        kind: ArchitectureKind,
        input_dim: int = 2,
        hidden_layers: int = 3,
        width: int = 4,
        **extra: Any
    ) -> NetworkConfig:
        return NetworkConfig(kind=kind, input_dim=input_dim, hidden_layers=hidden_layers, width=width, **extra)

    return build


# =============================================================================
# Run-Config Fixtures
# =============================================================================

@pytest.fixture
def tiny_run_data() -> Dict[str, Any]:
    """Convection run small enough to train in well under a second."""
    return {
        "problem": "Convection",
        "architecture": "SDM",
        "hidden_layers": 3,
        "width": 6,
        "seeds": [0, 1],
        "n_interior": 24,
        "n_initial": 8,
        "n_boundary": 8,
        "iterations": 3,
        "log_every": 2,
        "eval_resolution": [6, 8],
        "output_dir": "tiny"
    }


@pytest.fixture
def write_config(tmp_path) -> Callable[..., Path]:
    """Write config data to ``tmp_path`` as JSON (default) or YAML."""
    def write(data: Any, name: str = "config.json") -> Path:
        path = tmp_path / name
        if path.suffix == ".json":
            path.write_text(json.dumps(data), encoding="utf-8")
        else:
            path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return path

    return write


@pytest.fixture
def presets_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "presets"
