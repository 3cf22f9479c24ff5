"""Experiment registry, Monte Carlo runner, artifacts and CLI."""

from .config import ConfigError, ExperimentConfig
from .experiments import EXPERIMENTS, generate_truth
from .metrics import convergence_time, rmse_over_runs
from .plots import emit_plots
from .runner import RunArtifact, run_experiment

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "RunArtifact",
    "convergence_time",
    "emit_plots",
    "generate_truth",
    "rmse_over_runs",
    "run_experiment",
]
