"""Look-ahead greedy optimization of epidemic mitigation policies.

Models (``SeirModel``, ``EpicastLite``, learned surrogates) all expose
``simulate(state, npi, horizon) -> Trajectory``; ``optimize`` runs the
receding-horizon greedy search over an ``NpiMenu`` and ``exhaustive_search``
enumerates small policy spaces for validation.
"""

__version__ = "0.1.0"

from .epicast import EpicastLite, EpicastState, effective_beta
from .npi import NpiChoice, NpiMenu, Policy, business_menu, school_menu, seir_menu, total_reward
from .optimizer import (Decision, Infeasible, OptimizationResult, OptimizerConfig, evaluate_policy,
                        optimize, select_npi)
from .oracle import BudgetExceeded, OracleResult, exhaustive_search
from .seir import EpidemicState, NumericalDrift, SeirModel, SeirParams, Trajectory, simulate

__all__ = [
    "BudgetExceeded", "Decision", "EpicastLite", "EpicastState", "EpidemicState", "Infeasible",
    "NpiChoice", "NpiMenu", "NumericalDrift", "OptimizationResult", "OptimizerConfig", "OracleResult",
    "Policy", "SeirModel", "SeirParams", "Trajectory", "business_menu", "effective_beta",
    "evaluate_policy", "exhaustive_search", "optimize", "school_menu", "seir_menu", "select_npi",
    "simulate", "total_reward",
]
