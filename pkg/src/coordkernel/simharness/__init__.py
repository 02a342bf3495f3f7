"""Scenario harness: configs, runners, reports and the ``kernel`` command."""

from .config import ConfigError, Scenario, ScenarioConfig, load_config
from .economy import ConservationError, Economy, EconomyParams, EconomyResult
from .report import Check, RunReport, Table
from .scenarios import RUNNERS, run_scenario

__all__ = [
    "Check",
    "ConfigError",
    "ConservationError",
    "Economy",
    "EconomyParams",
    "EconomyResult",
    "RUNNERS",
    "RunReport",
    "Scenario",
    "ScenarioConfig",
    "Table",
    "load_config",
    "run_scenario",
]
