"""Run configuration: schema and loading"""

from .manager import ConfigManager, EnvironmentVariableOverride, load_config
from .schema import RunConfig, create_default_config, create_smoke_config

__all__ = [
    "ConfigManager",
    "EnvironmentVariableOverride",
    "RunConfig",
    "create_default_config",
    "create_smoke_config",
    "load_config",
]
