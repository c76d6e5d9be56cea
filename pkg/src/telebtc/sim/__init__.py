"""Scenario simulation: configs, agents, the tick harness and invariants."""

from .harness import InvariantViolation, World, dumps_report, run_scenario, run_world
from .scenario import PRESET_NAMES, InvalidConfig, ScenarioConfig, load_preset, load_scenario

__all__ = [
    "InvalidConfig",
    "InvariantViolation",
    "PRESET_NAMES",
    "ScenarioConfig",
    "World",
    "dumps_report",
    "load_preset",
    "load_scenario",
    "run_scenario",
    "run_world",
]
