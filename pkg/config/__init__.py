"""Config package."""

from .settings import (
    CIPHER_POLICIES,
    TAMPER_CHOICES,
    AgentSettings,
    BenchSettings,
    CaSettings,
    ConfigError,
    ScenarioConfig,
    load_config,
    parse_sizes,
)

__all__ = [
    'CIPHER_POLICIES',
    'TAMPER_CHOICES',
    'AgentSettings',
    'BenchSettings',
    'CaSettings',
    'ConfigError',
    'ScenarioConfig',
    'load_config',
    'parse_sizes',
]
