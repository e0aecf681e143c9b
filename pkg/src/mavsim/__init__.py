"""Simulation and test harness for a small indoor quadrocopter flight stack."""

from .config import ConfigError, load_scenario
from .sim import MetricsReport, RunLog, Simulation, run_scenario

__all__ = ["ConfigError", "MetricsReport", "RunLog", "Simulation", "load_scenario",
           "run_scenario"]
__version__ = "0.1.0"
