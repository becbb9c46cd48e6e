"""Discrete-event simulator for comparing serverless event schedulers."""

__version__ = "0.1.0"

from .scenario import Scenario, load, loads  # noqa: E402
from .simulation import Simulation, run_scenario  # noqa: E402

__all__ = ["Scenario", "Simulation", "load", "loads", "run_scenario", "__version__"]
