"""Load-aware fair throughput allocation for multirate 802.11 DCF networks."""
from .alloc import CRITERIA, AllocationError, AllocationResult, jain_index, optimize
from .analytic import ConvergenceError, EquilibriumSolution, solve_equilibrium
from .scenario import (
    NetworkScenario,
    PhyMacParams,
    ScenarioError,
    StationConfig,
    load_scenario,
    make_scenario,
    save_scenario,
)
from .sim import SimOutcome, SimulationError, run_many
from .sim import run as simulate

__version__ = "0.1.0"

__all__ = [
    "CRITERIA", "AllocationError", "AllocationResult", "ConvergenceError",
    "EquilibriumSolution", "NetworkScenario", "PhyMacParams", "ScenarioError",
    "SimOutcome", "SimulationError", "StationConfig", "jain_index", "load_scenario",
    "make_scenario", "optimize", "run_many", "save_scenario", "simulate",
    "solve_equilibrium", "__version__",
]
