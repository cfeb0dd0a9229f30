"""Minimum-energy multiple-access optimization for Wi-Fi uplink OFDMA/NOMA."""

from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    CorruptionError,
    DomainError,
    EmptyResultError,
    InfeasibleError,
    MacoptError,
    ParseError,
    SizeError,
)
from .scenario import Scenario, parse_config, read_config, validate, write_config

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "ConvergenceError",
    "CorruptionError",
    "DomainError",
    "EmptyResultError",
    "InfeasibleError",
    "MacoptError",
    "ParseError",
    "Scenario",
    "SizeError",
    "parse_config",
    "read_config",
    "validate",
    "write_config",
]
