"""Problem configuration loader.

Loads a problem YAML file, applies command-line overrides to the raw
mapping and validates the result against the Pydantic schema.

Usage:
    from apwdg.config import load_config

    config = load_config(Path("config/example1.yaml"), overrides=["basis.K=12"])
    problem = config.to_problem()
"""

from __future__ import annotations

import os
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import regex
import yaml
from pydantic import ValidationError

from apwdg.config_schema import CURRENT_SCHEMA_VERSION, ProblemConfig
from apwdg.core.errors import ConfigLoadError, ConfigValidationError
from apwdg.core.logging import get_logger
from apwdg.geometry import validate_sites
from apwdg.studies.convergence import ProblemSpec

logger = get_logger(__name__)

# Default config path - can be overridden via environment variable
DEFAULT_CONFIG_PATH = Path("config/example1.yaml")
CONFIG_PATH_ENV = "APWDG_CONFIG_PATH"

# Timeout (seconds) for matching user-supplied override strings
REGEX_TIMEOUT = 1

OVERRIDE_PATTERN = regex.compile(r"^(?P<path>[A-Za-z_]\w*(?:\.\w+)*)=(?P<value>.*)$")


def _get_config_path() -> Path:
    """Get the config file path from environment or default."""
    env_path = os.environ.get(CONFIG_PATH_ENV)
    if env_path:
        return Path(env_path)
    return DEFAULT_CONFIG_PATH


def _format_validation_errors(error: ValidationError) -> str:
    """Format Pydantic validation errors into actionable messages.

    Args:
        error: Pydantic ValidationError

    Returns:
        Formatted error message with specific field errors
    """
    messages = []
    for err in error.errors():
        # Build field path (e.g., "sites.0.radius")
        field_path = ".".join(str(loc) for loc in err["loc"])
        msg = err["msg"]
        err_type = err["type"]

        if err_type == "missing":
            messages.append(f"  - Missing required field '{field_path}'")
        elif err_type == "extra_forbidden":
            messages.append(f"  - Unknown key '{field_path}' (check the spelling)")
        elif err_type in ("int_type", "int_parsing", "int_from_float"):
            messages.append(f"  - Field '{field_path}' must be an integer")
        elif err_type in ("float_type", "float_parsing"):
            messages.append(f"  - Field '{field_path}' must be a number")
        else:
            messages.append(f"  - Field '{field_path}': {msg}")

    return "\n".join(messages)


def _load_yaml(path: Path) -> dict[str, Any]:
    """Load and parse YAML file.

    Raises:
        ConfigLoadError: If file not found, YAML parse error or not a mapping
    """
    if not path.exists():
        raise ConfigLoadError(
            f"Configuration file not found: {path}\n"
            f"Pass --config or set {CONFIG_PATH_ENV}; examples live in config/."
        )

    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigLoadError(f"Failed to parse YAML in {path}{where}:\n{e}") from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigLoadError(
            f"Configuration file must be a YAML mapping, got {type(data).__name__}"
        )
    return data


def _parse_override(override: str) -> tuple[list[str], Any]:
    try:
        match = OVERRIDE_PATTERN.match(override.strip(), timeout=REGEX_TIMEOUT)
    except TimeoutError as e:
        raise ConfigLoadError(f"Override {override[:40]!r} could not be parsed in time") from e
    if match is None:
        raise ConfigLoadError(
            f"Invalid override {override!r}. Expected dotted.key=value, e.g. basis.K=12"
        )
    try:
        value = yaml.safe_load(match.group("value")) if match.group("value") else None
    except yaml.YAMLError as e:
        raise ConfigLoadError(f"Invalid value in override {override!r}: {e}") from e
    return match.group("path").split("."), value


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply key=value overrides to a raw config mapping (in place).

    Path segments address mapping keys or, when numeric, list indices
    (sites.0.radius=1.5). Missing mappings along the path are created.

    Raises:
        ConfigLoadError: If an override is malformed or addresses a missing list item
    """
    for override in overrides:
        keys, value = _parse_override(override)
        node: Any = data
        for depth, key in enumerate(keys):
            last = depth == len(keys) - 1
            if isinstance(node, list):
                if not key.isdigit() or int(key) >= len(node):
                    raise ConfigLoadError(
                        f"Override {override!r}: '{'.'.join(keys[: depth + 1])}' "
                        f"is not an index of a list with {len(node)} items"
                    )
                if last:
                    node[int(key)] = value
                else:
                    node = node[int(key)]
            elif isinstance(node, dict):
                if last:
                    node[key] = value
                else:
                    node = node.setdefault(key, {})
            else:
                raise ConfigLoadError(
                    f"Override {override!r}: '{'.'.join(keys[:depth])}' is a scalar"
                )
        logger.debug("config_override_applied", key=".".join(keys), value=value)
    return data


def _validate_config(data: dict[str, Any], path: Path) -> ProblemConfig:
    """Validate config data against the Pydantic schema.

    Raises:
        ConfigValidationError: If validation fails
    """
    try:
        config = ProblemConfig(**data)
    except ValidationError as e:
        error_details = _format_validation_errors(e)
        raise ConfigValidationError(
            f"Configuration validation failed for {path}:\n{error_details}"
        ) from e

    if config.schema_version > CURRENT_SCHEMA_VERSION:
        raise ConfigValidationError(
            f"Config schema version {config.schema_version} is newer than "
            f"supported version {CURRENT_SCHEMA_VERSION}. "
            "Please upgrade apw-dg or downgrade the config."
        )
    return config


def load_config(path: Path | None = None, overrides: Sequence[str] = ()) -> ProblemConfig:
    """Load, override and validate a problem configuration.

    Args:
        path: Config file; defaults to APWDG_CONFIG_PATH or config/example1.yaml
        overrides: key=value strings applied before validation

    Raises:
        ConfigLoadError: If the file cannot be loaded or an override is malformed
        ConfigValidationError: If validation fails
    """
    config_path = path or _get_config_path()

    logger.debug("config_loading", path=str(config_path))

    data = apply_overrides(_load_yaml(config_path), overrides)
    config = _validate_config(data, config_path)

    logger.info(
        "config_loaded",
        path=str(config_path),
        schema_version=config.schema_version,
        sites=len(config.sites),
        overrides=len(overrides),
    )
    return config


def parse_config(
    path: Path | None = None, overrides: Sequence[str] = ()
) -> tuple[ProblemConfig, ProblemSpec]:
    """Full problem specification of a config file (geometry validated).

    Returns:
        (config, problem) where problem is the ProblemSpec of the file

    Raises:
        ConfigLoadError, ConfigValidationError: Configuration problems (exit 2)
        ProblemValidationError: Geometry problems such as overlapping spheres (exit 3)
    """
    config_path = path or _get_config_path()
    config = load_config(config_path, overrides)
    problem = config.to_problem(base_dir=config_path.parent)
    validate_sites(problem.cell, problem.sites)
    return config, problem
