"""Hierarchical load forecasting by online aggregation of benchmark forecasts
followed by projection onto the summation constraints."""

from .errors import ConfigError, DataError, HieraggError, StageError
from .hierarchy import HierarchySpec, build_constraint_matrix, build_projector, project
from .standardize import StandardizationStats, fit_standardizer
from .aggregate import BOA, MLPol, SequentialRidge, LiftedAggregator, DelayedLearner, OnlineGridSelector
from .pipeline import RunConfig, SyntheticFleetSpec, generate_fleet, run_pipeline

__version__ = "0.1.0"
