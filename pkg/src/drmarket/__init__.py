"""Distributed clearing of a day-ahead market with demand-response aggregators.

The market operator (MO) and the aggregators solve their own subproblems for
given prices on the aggregator-users balance; the MO then updates the prices
with a disaggregated proximal bundle method, a cutting-plane method or plain
subgradient ascent.
"""

from .dual import SolverConfig
from .model import (AggregatorModel, ApplianceSpec, GeneratorSpec, Line, MarketInstance, NetworkModel)
from .orchestrator import ClearingResult, evaluate_dual, run, solve_centralized
from .scenario import ScenarioFile, generate_default, validate

__all__ = [
    "AggregatorModel", "ApplianceSpec", "ClearingResult", "GeneratorSpec", "Line", "MarketInstance",
    "NetworkModel", "ScenarioFile", "SolverConfig", "evaluate_dual", "generate_default", "run",
    "solve_centralized", "validate",
]
