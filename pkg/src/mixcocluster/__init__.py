"""Co-clustering of mixed numeric/categorical data by exact MAP criterion minimization."""
from .criterion import CriterionValue, criterion, delta_criterion, likelihood_cost, prior_cost
from .ingest import Dataset, Schema, Variable, parse_long_observations, parse_wide_table, read_dataset
from .model import CoclusterModel, Move, MoveKind, apply_move, build_model, verify_counts
from .optimizer import FitResult, OptimizerConfig, fit

__all__ = [
    "CoclusterModel", "CriterionValue", "Dataset", "FitResult", "Move", "MoveKind", "OptimizerConfig",
    "Schema", "Variable", "apply_move", "build_model", "criterion", "delta_criterion", "fit",
    "likelihood_cost", "parse_long_observations", "parse_wide_table", "prior_cost", "read_dataset",
    "verify_counts",
]
