"""Routed multi-task networks for wireless power allocation.

A single base network serves several allocation problems of different size
and objective; a small router network picks, per task, which hidden weights
take part in the forward pass.
"""

from .benchmarks import SCHEMES, train_naive, train_single_task, train_single_tasks, train_zero_padding
from .config import ExperimentConfig, load_config, parse_config
from .errors import ConfigError, DataError, DimensionError, DomainError, MtlError, NumericError
from .experiment import run_experiment
from .nn import DenseParams, make_rng
from .router import MaskSet, RouterState, harden, init_router, route
from .tasks import TaskSpec, build_datasets, solve_delay_min, ul_reference_policy
from .training import RoutedModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "SCHEMES", "ConfigError", "DataError", "DenseParams", "DimensionError", "DomainError",
    "ExperimentConfig", "MaskSet", "MtlError", "NumericError", "RoutedModel", "RouterState",
    "TaskSpec", "TrainConfig", "build_datasets", "harden", "init_router", "load_config",
    "make_rng", "parse_config", "route", "run_experiment", "solve_delay_min", "train",
    "train_naive", "train_single_task", "train_single_tasks", "train_zero_padding",
    "ul_reference_policy",
]
