"""Energy-efficiency maximization for wireless-powered V2X networks.

Joint power-splitting, transmit-power, and resource-block optimization via
Dinkelbach iterations, successive convex approximation, and Lagrangian
duality, with exact metrics, a brute-force oracle, and sweep experiments.
"""

from .scenario import (ScenarioConfig, Layout, NetworkSnapshot, build_scenario,
                       advance_mobility, realize_channels, simulate_scenario,
                       load_config, save_config)
from .metrics import Policy, MetricsReport, energy_efficiency, constraint_residuals
from .approx import SCACoefficients, update_coefficients
from .solver import (SolverParams, DualState, SolveReport, dinkelbach_solve,
                     inner_dual_solve)
from .oracle import OracleConfig, OracleResult, oracle_max_ee, oracle_max_transformed
from .experiments import SweepSpec, baseline_policy, run_sweep, emit_results

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig", "Layout", "NetworkSnapshot", "build_scenario",
    "advance_mobility", "realize_channels", "simulate_scenario", "load_config",
    "save_config", "Policy", "MetricsReport", "energy_efficiency",
    "constraint_residuals", "SCACoefficients", "update_coefficients",
    "SolverParams", "DualState", "SolveReport", "dinkelbach_solve",
    "inner_dual_solve", "OracleConfig", "OracleResult", "oracle_max_ee",
    "oracle_max_transformed", "SweepSpec", "baseline_policy", "run_sweep",
    "emit_results",
]
