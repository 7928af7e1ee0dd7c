"""
DMPINN Utility Functions and Configuration Management

Logging setup, run-config loading and validation, config fingerprinting
and the CSV/JSON writers behind every output file of the laboratory.

Core Technical Features:
- Structured logging setup with configurable verbosity levels
- JSON/YAML run-config loading with field-level validation records
- Deterministic configuration hashing for summary fingerprints
- Byte-reproducible CSV output (floats written with repr)
- Parameter files carrying a shape manifest
"""

import json
import logging
import hashlib
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence, Union

import yaml
from pydantic import ValidationError as PydanticValidationError

from .models import (
    ConfigurationError, ManifestMismatchError, NetworkConfig, RunConfig, ValidationError
)

if TYPE_CHECKING:
    from .architectures import NetworkParams

OUTPUT_ROOT_ENV = "DMPINN_OUTPUT_ROOT"
CONFIG_SUFFIXES = (".json", ".yaml", ".yml")


def setup_logging(
    verbose: bool = False,
    log_file: Optional[str] = None,
    structured: bool = True
) -> None:
    """
    Systematic logging configuration.

    Technical Implementation:
    - Pipe-separated structured format with timestamp precision
    - DEBUG level under ``verbose``, INFO otherwise
    - Optional file handler next to the stderr stream

    Args:
        verbose: Enable DEBUG level logging
        log_file: Optional log file path for persistent storage
        structured: Use the pipe-separated structured format
    """
    log_level = logging.DEBUG if verbose else logging.INFO

    if structured:
        log_format = (
            "%(asctime)s | %(levelname)-8s | %(name)-20s | "
            "%(funcName)-15s | %(message)s"
        )
    else:
        log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=log_level,
        format=log_format,
        datefmt='%Y-%m-%d %H:%M:%S',
        handlers=handlers,
        force=True
    )

    logger = logging.getLogger(__name__)
    logger.debug(f"DMPINN logging configured: level={log_level}, structured={structured}")


# =============================================================================
# Run configuration
# =============================================================================

def validate_run_config(config_data: Any) -> List[ValidationError]:
    """
    Validate raw run-config data without raising.

    Technical Implementation:
    - Phase 1: structural check (mapping at the root)
    - Phase 2: required fields
    - Phase 3: pydantic schema validation, errors flattened to dotted paths

    Args:
        config_data: Parsed JSON/YAML content

    Returns:
        List of validation errors; empty when the config is valid
    """
    errors: List[ValidationError] = []

    # Phase 1: Structural Validation
    if not isinstance(config_data, dict):
        errors.append(ValidationError(
            field='root',
            message="Configuration must be a mapping",
            severity="critical"
        ))
        return errors

    # Phase 2: Required Fields
    if 'problem' not in config_data:
        errors.append(ValidationError(
            field='problem',
            message="Required field 'problem' missing from configuration",
            severity="critical"
        ))
        return errors

    # Phase 3: Schema Validation
    try:
        RunConfig.model_validate(config_data)
    except PydanticValidationError as e:
        for issue in e.errors():
            location = ".".join(str(part) for part in issue.get("loc", ())) or "root"
            value = issue.get("input")
            errors.append(ValidationError(
                field=location,
                message=issue.get("msg", "invalid value"),
                value=value if isinstance(value, (str, int, float, bool)) else None,
                severity="error"
            ))

    logger = logging.getLogger(__name__)
    if errors:
        logger.warning(f"Configuration validation found {len(errors)} issues")
    else:
        logger.debug("Configuration validation completed successfully")

    return errors


def read_config_file(config_path: Union[str, Path]) -> Any:
    """Parse a JSON or YAML config file according to its suffix."""
    path = Path(config_path)
    if path.suffix.lower() not in CONFIG_SUFFIXES:
        raise ConfigurationError(f"unsupported config format '{path.suffix}' (use .json, .yaml or .yml)")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            if path.suffix.lower() == '.json':
                return json.load(f)
            return yaml.safe_load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot parse config {path}: {e}") from e


def load_run_config(config_path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a run config from disk.

    Raises:
        ConfigurationError: carrying the field-level issues
    """
    logger = logging.getLogger(__name__)
    data = read_config_file(config_path)
    issues = validate_run_config(data)
    if issues:
        summary = "; ".join(str(issue) for issue in issues)
        raise ConfigurationError(f"invalid run config {config_path}: {summary}", issues=issues)
    config = RunConfig.model_validate(data)
    logger.info(f"Run configuration loaded from: {config_path}")
    return config


def resolve_output_dir(explicit: Optional[str], config: Optional[RunConfig] = None) -> Path:
    """
    Output directory: explicit flag, else config value under the env root.

    A relative config ``output_dir`` is placed under ``$DMPINN_OUTPUT_ROOT``
    when that variable is set.
    """
    if explicit:
        return Path(explicit)
    configured = config.output_dir if config is not None else "runs"
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not Path(configured).is_absolute():
        return Path(root) / configured
    return Path(configured)


def generate_config_hash(config_data: Dict[str, Any]) -> str:
    """
    Generate deterministic configuration hash for run fingerprinting.

    Technical Implementation:
    - Deterministic JSON serialization with sorted keys
    - SHA-256 hash calculation

    Args:
        config_data: Configuration dictionary to hash

    Returns:
        Hexadecimal hash string
    """
    normalized_config = _normalize_config_for_hashing(config_data)
    config_json = json.dumps(normalized_config, sort_keys=True, separators=(',', ':'))
    config_hash = hashlib.sha256(config_json.encode('utf-8')).hexdigest()

    logger = logging.getLogger(__name__)
    logger.debug(f"Configuration hash generated: {config_hash[:16]}...")

    return config_hash


def _normalize_config_for_hashing(config_data: Any) -> Any:
    """Drop output-location keys and convert tuples so equal runs hash equally."""
    if isinstance(config_data, dict):
        return {
            str(key): _normalize_config_for_hashing(value)
            for key, value in config_data.items()
            if key not in ("output_dir",)
        }
    if isinstance(config_data, (list, tuple)):
        return [_normalize_config_for_hashing(item) for item in config_data]
    return config_data


# =============================================================================
# File system and output formats
# =============================================================================

def ensure_directory_structure(base_path: Union[str, Path]) -> Path:
    """
    Create ``base_path`` (and parents) if missing.

    Args:
        base_path: Directory path to create

    Returns:
        The normalized directory path
    """
    logger = logging.getLogger(__name__)
    try:
        normalized_path = Path(os.path.normpath(os.path.abspath(base_path)))
        normalized_path.mkdir(parents=True, exist_ok=True)
        logger.debug(f"Directory structure ensured: {normalized_path}")
        return normalized_path
    except OSError as e:
        logger.error(f"Directory creation failed for {base_path}: {e}")
        raise


def format_csv_value(value: Any) -> str:
    """Shortest round-trip text for floats, empty for None."""
    if value is None:
        return ""
    # numpy scalars first: repr(np.float64) is not plain text under numpy 2
    if hasattr(value, "item"):
        return format_csv_value(value.item())
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(
    path: Union[str, Path],
    header: Sequence[str],
    rows: Iterable[Sequence[Any]]
) -> Path:
    """Write a header plus rows with '\\n' line endings; byte-reproducible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(format_csv_value(value) for value in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Read a CSV written by write_csv back as header-keyed string rows."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        return []
    header = text[0].split(",")
    return [dict(zip(header, line.split(","))) for line in text[1:] if line]


def write_json(path: Union[str, Path], data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def save_params(path: Union[str, Path], params: "NetworkParams") -> Path:
    """
    Persist network parameters with their shape manifest.

    Layout: ``{"network": NetworkConfig, "manifest": [{"name", "shape"}],
    "values": {name: nested lists}}``. Floats survive the JSON round trip
    exactly (json writes repr).
    """
    named = params.named_arrays()
    payload = {
        "network": params.config.model_dump(mode="json"),
        "manifest": [{"name": name, "shape": list(array.shape)} for name, array in named.items()],
        "values": {name: array.tolist() for name, array in named.items()}
    }
    return write_json(path, payload)


def load_params(path: Union[str, Path], config: Optional[NetworkConfig] = None) -> "NetworkParams":
    """
    Read a parameter file, checking it against ``config``.

    Without ``config`` the network descriptor stored in the file is used.

    Raises:
        ManifestMismatchError: stored shapes disagree with the network
        ConfigurationError: unreadable file or missing sections
    """
    from .architectures import NetworkParams

    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read parameter file {path}: {e}") from e
    if not isinstance(payload, dict) or "values" not in payload:
        raise ConfigurationError(f"parameter file {path} has no 'values' section")

    if config is None:
        if "network" not in payload:
            raise ConfigurationError(f"parameter file {path} has no 'network' descriptor")
        try:
            config = NetworkConfig.model_validate(payload["network"])
        except PydanticValidationError as e:
            raise ConfigurationError(f"invalid network descriptor in {path}: {e}") from e

    manifest = payload.get("manifest")
    if manifest is not None:
        declared = {entry["name"]: tuple(entry["shape"]) for entry in manifest}
        expected = NetworkParams.expected_manifest(config)
        if declared != expected:
            raise ManifestMismatchError(expected, declared)

    logging.getLogger(__name__).debug(f"Loaded parameters from {path}")
    return NetworkParams.from_named(config, payload["values"])


def format_technical_duration(seconds: float) -> str:
    """Per-iteration wall time as milliseconds below one second, seconds above."""
    if seconds < 1:
        return f"{seconds*1000:.0f}ms"
    return f"{seconds:.1f}s"
