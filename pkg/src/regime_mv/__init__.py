"""Mean-variance portfolio selection in regime-switching jump markets.

Regimes are indexed from 0 in the Python API.
"""

from regime_mv.errors import InfeasibleError, ModeError, ModelError, RegimeMVError, SolverError
from regime_mv.market_model import (Atom, ConstraintMode, JumpComponent, MarketModel,
                                    PiecewiseConstant, check_feasibility, validate_model)
from regime_mv.mc_engine import SimConfig, SimulationReport, simulate_wealth, verify_frontier
from regime_mv.model_io import load_model, save_model
from regime_mv.policy_frontier import (FeedbackPolicy, FrontierPoint, FrontierQuery, frontier,
                                       lambda_star)
from regime_mv.riccati_constrained import ConstrainedSolution, solve_constrained
from regime_mv.riccati_unconstrained import UnconstrainedSolution, solve

__version__ = "0.1.0"

__all__ = [
    "Atom", "ConstrainedSolution", "ConstraintMode", "FeedbackPolicy", "FrontierPoint",
    "FrontierQuery", "InfeasibleError", "JumpComponent", "MarketModel", "ModeError",
    "ModelError", "PiecewiseConstant", "RegimeMVError", "SimConfig", "SimulationReport",
    "SolverError", "UnconstrainedSolution", "check_feasibility", "frontier", "lambda_star",
    "load_model", "save_model", "simulate_wealth", "solve", "solve_constrained",
    "validate_model", "verify_frontier",
]
