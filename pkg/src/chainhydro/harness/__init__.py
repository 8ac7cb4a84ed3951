"""Experiment runner, verification oracles and command-line entry point."""

from .config import ExperimentConfig, load_config
from .experiments import EXPERIMENTS, RunManifest, run_experiment
from .oracles import MCEstimate, bessel_series, mc_oracle, ode_oracle

__all__ = [
    "ExperimentConfig",
    "load_config",
    "EXPERIMENTS",
    "RunManifest",
    "run_experiment",
    "MCEstimate",
    "mc_oracle",
    "ode_oracle",
    "bessel_series",
]
