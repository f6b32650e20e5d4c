"""Workflow entry points for training, evaluation and verification."""

from .experiment import export_datasets, run_and_export, run_experiment
from .training import TrainingError, run_training, train_aud_head, train_fbs_layers
from .verification import CHECKS, run_checks

__all__ = [
    "CHECKS",
    "TrainingError",
    "export_datasets",
    "run_and_export",
    "run_checks",
    "run_experiment",
    "run_training",
    "train_aud_head",
    "train_fbs_layers",
]
