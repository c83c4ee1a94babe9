"""Without-replacement adaptive importance sampling for human-in-the-loop measurement."""

from .estimator import ActiveRun, EstimateReport, run_active_measurement
from .pool import LabeledSet, Unit, UnitPool, load_pool, partial_sum, total_true
from .proposal import ClampPolicy, PredictionTable, Proposal, build_proposal
from .weights import WeightScheme

__all__ = [
    "ActiveRun",
    "ClampPolicy",
    "EstimateReport",
    "LabeledSet",
    "PredictionTable",
    "Proposal",
    "Unit",
    "UnitPool",
    "WeightScheme",
    "build_proposal",
    "load_pool",
    "partial_sum",
    "run_active_measurement",
    "total_true",
]
