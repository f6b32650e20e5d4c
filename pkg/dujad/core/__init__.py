"""Core numerics for the DU-JAD simulator."""

from .evaluations import (
    aggregate,
    average_symbol_error_rate,
    compute_metrics,
    paired_comparison,
    user_detection_error_rate,
)

__all__ = [
    "aggregate",
    "average_symbol_error_rate",
    "compute_metrics",
    "paired_comparison",
    "user_detection_error_rate",
]
