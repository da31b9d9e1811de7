"""Batch experiment harness and command-line interface."""

from .config import AXES, TASKS, ExperimentConfig
from .data import load_csv_dataset, split_indices
from .experiments import build_datasets, format_table, run_experiment, summarize, write_bundle

__all__ = ["AXES", "TASKS", "ExperimentConfig", "load_csv_dataset", "split_indices", "build_datasets",
           "format_table", "run_experiment", "summarize", "write_bundle"]
