"""
Training configuration files for corefsum.

A config file is flat text, one ``key=value`` per line with ``#`` comments.
Values are read as YAML scalars, which also makes ``key: value`` lines
valid. Keys are the field names of ModelConfig and TrainingConfig.
"""

import dataclasses
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .exceptions import ArtifactIOError, ConfigurationError
from .fusion import HeadSelection
from .model import ModelConfig
from .storage import PathLike, read_text, write_text_atomic
from .training import TrainingConfig


logger = logging.getLogger(__name__)

THREADS_ENV = "COREFSUM_THREADS"

MODEL_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig)}
TRAINING_KEYS = {f.name: f for f in dataclasses.fields(TrainingConfig)}


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Convert a YAML scalar to the type of the field's default."""
    if key == "heads":
        if value is None:
            return ()
        if isinstance(value, str):
            return HeadSelection.parse(value).pairs
        if isinstance(value, list):
            return HeadSelection(tuple(tuple(pair) for pair in value)).pairs
        raise ValueError("expected layer:head,... pairs")
    if value is None:
        if default is None:
            return None
        raise ValueError("a value is required")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError("expected true or false")
        return value
    if isinstance(default, int) or (default is None and key == "max_steps"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError("expected an integer")
        return value
    if isinstance(default, float):
        # YAML reads 1e-3 (no dot) as a string
        if isinstance(value, bool):
            raise ValueError("expected a number")
        return float(value)
    return str(value)


class ConfigFile:
    """Reads, validates and writes a flat training config file."""

    def __init__(self, path: Optional[PathLike] = None):
        """Initialize a config file.

        Args:
            path: File to read; an absent path means an empty config
        """
        self.path = Path(path) if path is not None else None
        self._values: Optional[Dict[str, Any]] = None

    def _load(self) -> Dict[str, Any]:
        if self._values is not None:
            return self._values

        values: Dict[str, Any] = {}
        if self.path is None:
            self._values = values
            return values
        if not self.path.exists():
            raise ArtifactIOError(f"Config file not found: {self.path}")

        for number, raw in enumerate(read_text(self.path).splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                key, sep, value = line.partition(":")
            if not sep or not key.strip():
                raise ConfigurationError(f"{self.path}:{number}: expected key=value")
            key, value = key.strip(), value.strip()
            if key == "heads":
                # YAML would read 1:2 as a base-60 integer
                values[key] = value or None
                continue
            try:
                values[key] = yaml.safe_load(value) if value else None
            except yaml.YAMLError as e:
                raise ConfigurationError(f"{self.path}:{number}: bad value: {e}")

        logger.debug(f"Loaded configuration from {self.path}")
        self._values = values
        return values

    def get(self, key: str, default: Any = None) -> Any:
        return self._load().get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set a configuration value (kept in memory until ``save``)."""
        if not isinstance(key, str) or not key.strip():
            raise ConfigurationError("Configuration key must be a non-empty string")
        self._load()[key] = value

    def list_all(self) -> Dict[str, Any]:
        return self._load().copy()

    def _typed(self) -> Tuple[Dict[str, Any], Dict[str, Any], Dict[str, str]]:
        """Typed model and training values plus per-key errors."""
        errors: Dict[str, str] = {}
        model_values: Dict[str, Any] = {}
        training_values: Dict[str, Any] = {}

        for key, value in self._load().items():
            if key in MODEL_KEYS:
                field, target = MODEL_KEYS[key], model_values
            elif key in TRAINING_KEYS:
                field, target = TRAINING_KEYS[key], training_values
            else:
                errors[key] = "unknown configuration key"
                continue
            default = field.default if field.default is not dataclasses.MISSING else None
            try:
                target[key] = _coerce(key, value, default)
            except (ValueError, TypeError, ConfigurationError) as e:
                errors[key] = str(e)
        return model_values, training_values, errors

    def validate(self) -> Dict[str, str]:
        """Validate current configuration.

        Whether ``heads`` suits the variant is left to ``ModelConfig.check``
        once command-line overrides are applied.

        Returns:
            Dictionary of validation errors (empty if valid)
        """
        model_values, training_values, errors = self._typed()
        if not errors:
            errors.update(ModelConfig(**model_values).validate(match_variant=False))
            errors.update(TrainingConfig(**training_values).validate())
        return errors

    def to_configs(self) -> Tuple[ModelConfig, TrainingConfig]:
        """Build both configs, raising on any problem.

        Raises:
            ConfigurationError: Listing every invalid key
        """
        errors = self.validate()
        if errors:
            details = "; ".join(f"{k}: {v}" for k, v in sorted(errors.items()))
            raise ConfigurationError(f"Invalid configuration {self.path or ''}: {details}".strip())

        model_values, training_values, _ = self._typed()
        return ModelConfig(**model_values), TrainingConfig(**training_values)

    def save(self, path: Optional[PathLike] = None) -> Path:
        """Write the file atomically in ``key=value`` form."""
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ConfigurationError("No path to save configuration to")

        lines = []
        for key, value in self._load().items():
            if key == "heads" and value is not None and not isinstance(value, str):
                text = str(HeadSelection(tuple(value)))
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif value is None:
                text = ""
            else:
                text = str(value)
            lines.append(f"{key}={text}")
        write_text_atomic(target, "".join(f"{line}\n" for line in lines))
        logger.debug(f"Saved configuration to {target}")
        return target

    @classmethod
    def from_configs(
        cls, model_config: ModelConfig, training_config: TrainingConfig, path: Optional[PathLike] = None
    ) -> "ConfigFile":
        config = cls(path)
        values: Dict[str, Any] = {}
        config._values = values
        values.update(model_config.to_dict())
        values.update(training_config.to_dict())
        return config


def worker_count(default: Optional[int] = None) -> int:
    """Worker threads for per-item parallel work, capped by COREFSUM_THREADS."""
    fallback = default or os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None or not raw.strip():
        return fallback
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if value < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return min(value, fallback)
