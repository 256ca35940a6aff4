"""Experiment orchestration: configs, the convergence studies, CSV/JSON
artifacts and the command-line entry point."""

from .config import RunConfig, parse_config, parse_config_text
from .experiments import (
    ConvergenceTable,
    EXPERIMENTS,
    experiment_ids,
)
from .runner import run

__all__ = [
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "ConvergenceTable",
    "EXPERIMENTS",
    "experiment_ids",
    "run",
]
