"""Scenario configuration, the built-in RFP case and the run loop."""
from collabmon.scenario.config import (
    CONFIG_SCHEMA,
    Arrival,
    ConfigInvalid,
    ScenarioConfig,
    config_faults,
    load_config,
)
from collabmon.scenario.rfp import build_rfp_case
from collabmon.scenario.runner import (
    COMPARISON_COLUMNS,
    RunReport,
    monitored_events,
    run,
    run_closed_loop,
)

__all__ = [
    "CONFIG_SCHEMA", "COMPARISON_COLUMNS", "Arrival", "ConfigInvalid", "RunReport", "ScenarioConfig",
    "build_rfp_case", "config_faults", "load_config", "monitored_events", "run", "run_closed_loop",
]
