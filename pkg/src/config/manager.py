"""
Configuration Manager

Loads a run configuration from JSON or YAML, applies environment and CLI
overrides, validates it against RunConfig and writes canonical snapshots.

Usage:
    from src.config.manager import ConfigManager

    manager = ConfigManager("configs/sample.json")
    config = manager.load_validated_config(overrides={"seed": 3})
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from ..errors import ConfigError
from ..utils.file_utils import atomic_write_text
from .schema import RunConfig

logger = logging.getLogger("ConfigManager")

ENV_PREFIX = "CFFLOW_"
SECTIONS = ("federation", "arch", "similarity", "clustering", "ccgraph", "training", "lifecycle", "output")


@dataclass
class ValidationResult:
    """Configuration validation outcome"""
    is_valid: bool
    errors: List[str] = field(default_factory=list)
    config: Optional[RunConfig] = None


class EnvironmentVariableOverride:
    """Applies CFFLOW_SECTION_KEY environment variables to a raw config dict"""

    @staticmethod
    def apply_overrides(
        config_dict: Dict[str, Any],
        environ: Optional[Mapping[str, str]] = None,
    ) -> Dict[str, Any]:
        """
        Apply overrides such as CFFLOW_TRAINING_ROUNDS=5 or CFFLOW_SEED=3.

        The first token after the prefix names a section when it is one;
        the remaining tokens, joined by underscores, name the field.
        """
        env = os.environ if environ is None else environ
        for env_key, env_value in sorted(env.items()):
            if not env_key.startswith(ENV_PREFIX) or not env_value:
                continue
            parts = env_key[len(ENV_PREFIX):].lower().split("_")
            if parts[0] in SECTIONS and len(parts) > 1:
                section = config_dict.setdefault(parts[0], {})
                if not isinstance(section, dict):
                    continue
                section["_".join(parts[1:])] = EnvironmentVariableOverride._convert_env_value(env_value)
            else:
                config_dict["_".join(parts)] = EnvironmentVariableOverride._convert_env_value(env_value)
            logger.debug(f"Applied environment override {env_key}")
        return config_dict

    @staticmethod
    def _convert_env_value(value: str) -> Union[str, int, float, bool, None]:
        """Convert an environment string to a Python value"""
        if value.lower() in ("true", "false"):
            return value.lower() == "true"
        if value.lower() in ("null", "none"):
            return None
        if value.isdigit() or (value.startswith("-") and value[1:].isdigit()):
            return int(value)
        try:
            if "." in value or "e" in value.lower():
                return float(value)
        except ValueError:
            pass
        return value


class ConfigManager:
    """Loads, validates and snapshots run configurations"""

    def __init__(self, config_path: Optional[Union[str, Path]] = None, env_file: Optional[str] = ".env"):
        """
        Args:
            config_path: JSON or YAML file; defaults only when omitted
            env_file: dotenv file loaded when present
        """
        self.config_path = Path(config_path) if config_path is not None else None
        self.env_file = env_file

    def load_validated_config(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """
        Load the file, apply environment then CLI overrides and validate.

        Args:
            overrides: Nested dict merged last (e.g. {"output": {"dir": "runs/x"}})

        Raises:
            ConfigError: If the file is missing or unreadable or validation fails
        """
        if self.env_file and Path(self.env_file).exists():
            load_dotenv(self.env_file, override=False)

        raw = self._load_config_file(self.config_path) if self.config_path else {}
        raw = EnvironmentVariableOverride.apply_overrides(raw)
        if overrides:
            self._deep_update(raw, overrides)

        result = self._validate_config(raw)
        if not result.is_valid or result.config is None:
            raise ConfigError("Configuration validation failed", result.errors)
        return result.config

    def _load_config_file(self, file_path: Path) -> Dict[str, Any]:
        """Parse a config file; JSON is read with the YAML loader"""
        if not file_path.exists():
            raise ConfigError(f"Configuration file not found: {file_path}")
        if file_path.suffix.lower() not in (".json", ".yml", ".yaml"):
            raise ConfigError(f"Unsupported configuration file format: {file_path.suffix}")
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                raw_data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Failed to parse configuration file {file_path}: {e}") from e
        if not isinstance(raw_data, dict):
            raise ConfigError(f"Configuration file {file_path} must contain a mapping")
        return raw_data

    @staticmethod
    def _validate_config(config_dict: Dict[str, Any]) -> ValidationResult:
        """Validate a raw dict against RunConfig, collecting every field error"""
        try:
            config = RunConfig(**config_dict)
        except ValidationError as e:
            errors = []
            for error in e.errors():
                field_path = ".".join(str(loc) for loc in error["loc"]) or "config"
                errors.append(f"{field_path}: {error['msg']}")
            return ValidationResult(is_valid=False, errors=errors)
        return ValidationResult(is_valid=True, config=config)

    @staticmethod
    def snapshot_text(config: RunConfig) -> str:
        """Canonical JSON text of a configuration"""
        return json.dumps(config.to_snapshot(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def save_snapshot(cls, config: RunConfig, file_path: Union[str, Path]) -> Path:
        """Write the effective configuration; loading it alone reproduces the run"""
        target = Path(file_path)
        atomic_write_text(target, cls.snapshot_text(config))
        return target

    @staticmethod
    def _deep_update(base_dict: Dict[str, Any], update_dict: Dict[str, Any]) -> None:
        """Deep update dictionary with another dictionary"""
        for key, value in update_dict.items():
            if key in base_dict and isinstance(base_dict[key], dict) and isinstance(value, dict):
                ConfigManager._deep_update(base_dict[key], value)
            else:
                base_dict[key] = value


def load_config(config_path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Convenience function to load configuration"""
    return ConfigManager(config_path).load_validated_config(overrides)


__all__ = [
    "ConfigManager",
    "EnvironmentVariableOverride",
    "ValidationResult",
    "load_config",
]
