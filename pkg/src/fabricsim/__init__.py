"""Discrete-event simulator of synchronous data-parallel training on leaf/spine fabrics."""

from .config import ConfigError, ScenarioConfig, load_scenario, parse_scenario
from .engine import IterationRecord, RunResult, Simulation, run_simulation
from .harness import SweepSpec, SweepTable, emit, run_sweep
from .metrics import FailureModeReport, MetricsReport, classify, compute_metrics, export_timeline

__all__ = [
    "ConfigError", "ScenarioConfig", "load_scenario", "parse_scenario",
    "IterationRecord", "RunResult", "Simulation", "run_simulation",
    "SweepSpec", "SweepTable", "emit", "run_sweep",
    "FailureModeReport", "MetricsReport", "classify", "compute_metrics", "export_timeline",
]
