"""Utility maximization with consumption and endowment on finite event trees, solved through convex duality."""

from .errors import (
    ArbitrageError,
    DegenerateDualError,
    FinancingError,
    ScenarioDualityError,
    ScenarioError,
    SizeGuardError,
    SolverError,
    UtilityError,
)
from .io import load_scenario, save_scenario, shipped_fixtures
from .market_model import (
    ConsumptionMeasure,
    ConstraintCone,
    EventTree,
    MarketScenario,
    Strategy,
    validate_scenario,
)
from .solver import Solution, solve

__version__ = "0.1.0"

__all__ = [
    "ArbitrageError",
    "ConsumptionMeasure",
    "ConstraintCone",
    "DegenerateDualError",
    "EventTree",
    "FinancingError",
    "MarketScenario",
    "ScenarioDualityError",
    "ScenarioError",
    "SizeGuardError",
    "Solution",
    "SolverError",
    "Strategy",
    "UtilityError",
    "load_scenario",
    "save_scenario",
    "shipped_fixtures",
    "solve",
    "validate_scenario",
]
