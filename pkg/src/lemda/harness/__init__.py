"""Experiment harness: configs, seed sweeps, ablations, throughput and the SVG probe plot."""

from .config import AUGMENTATIONS, ConfigError, ExperimentConfig, load, loads
from .figure3 import render_figure3
from .runner import (SUITES, RunResult, SeedResult, ablation_suite, measure_throughput, roc_auc,
                     run, suite_cells)

__all__ = [
    "AUGMENTATIONS", "ConfigError", "ExperimentConfig", "load", "loads", "render_figure3",
    "SUITES", "RunResult", "SeedResult", "ablation_suite", "measure_throughput", "roc_auc",
    "run", "suite_cells",
]
