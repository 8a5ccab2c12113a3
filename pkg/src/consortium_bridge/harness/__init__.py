"""Scenario runner, reports and command-line interface."""
from .report import PHASES, RequestTimeline, RunReport, ShareRow, compare_runs
from .scenario import Scenario, builtin_scenarios, load_scenario, parse_scenario, scenario_from_dict, with_override
from .simulation import ConsortiumSimulation, run_scenario

__all__ = [
    "PHASES", "ConsortiumSimulation", "RequestTimeline", "RunReport", "Scenario", "ShareRow",
    "builtin_scenarios", "compare_runs", "load_scenario", "parse_scenario", "run_scenario",
    "scenario_from_dict", "with_override",
]
