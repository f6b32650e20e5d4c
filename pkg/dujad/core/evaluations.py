"""Error-rate metrics and Monte-Carlo summaries."""

from __future__ import annotations

import logging
import math
from typing import Tuple

import numpy as np
import pandas as pd
from scipy import stats

from dujad.core.detection import DetectionReport
from dujad.core.scenario import Instance
from dujad.schemas import METHOD_NAMES

_LOGGER = logging.getLogger(__name__)

SUMMARY_COLUMNS: Tuple[str, ...] = (
    "method",
    "P",
    "trials",
    "uder_mean",
    "uder_stderr",
    "aser_mean",
    "aser_stderr",
)


def user_detection_error_rate(xi: np.ndarray, xi_hat: np.ndarray) -> float:
    """Fraction of UEs whose activity decision is wrong."""

    xi = np.asarray(xi).astype(int)
    xi_hat = np.asarray(xi_hat).astype(int)
    if xi.shape != xi_hat.shape:
        raise ValueError(f"Activity shapes differ: {xi.shape} vs {xi_hat.shape}")
    return float(np.mean(np.abs(xi - xi_hat)))


def average_symbol_error_rate(xi: np.ndarray, XD_true: np.ndarray, XD_tilde: np.ndarray) -> float | None:
    """Symbol error rate over the rows of truly active UEs; ``None`` without active UEs."""

    if XD_true.shape != XD_tilde.shape:
        raise ValueError(f"Data shapes differ: {XD_true.shape} vs {XD_tilde.shape}")
    active = np.asarray(xi).astype(bool)
    num_active = int(active.sum())
    if num_active == 0:
        return None
    errors = XD_true[active] != XD_tilde[active]
    return float(errors.sum()) / (XD_true.shape[1] * num_active)


def compute_metrics(inst: Instance, report: DetectionReport) -> Tuple[float, float]:
    """Fill UDER and ASER into ``report`` and return them.

    ASER is evaluated on the pre-gating symbols. Without active UEs it is
    reported as 0 and the report is flagged.
    """

    uder = user_detection_error_rate(inst.xi, report.xi_hat)
    aser = average_symbol_error_rate(inst.xi, inst.X_D, report.XD_tilde)
    if aser is None:
        _LOGGER.warning("ASER undefined for an instance without active UEs; recording 0")
        report.aser_defined = False
        aser = 0.0
    report.uder, report.aser = uder, aser
    return uder, aser


def _method_rank(method: str) -> int:
    return METHOD_NAMES.index(method) if method in METHOD_NAMES else len(METHOD_NAMES)


def _stderr(values: pd.Series) -> float:
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def aggregate(rows: pd.DataFrame) -> pd.DataFrame:
    """Per-(method, P) mean and standard error of UDER and ASER."""

    if rows.empty:
        raise ValueError("Cannot aggregate an empty result table")
    grouped = rows.groupby(["method", "P"], sort=False)
    summary = grouped.agg(
        trials=("uder", "size"),
        uder_mean=("uder", "mean"),
        uder_stderr=("uder", _stderr),
        aser_mean=("aser", "mean"),
        aser_stderr=("aser", _stderr),
    ).reset_index()
    summary["_rank"] = summary["method"].map(_method_rank)
    summary = summary.sort_values(["_rank", "P"], kind="mergesort").drop(columns="_rank")
    return summary.loc[:, list(SUMMARY_COLUMNS)].reset_index(drop=True)


def paired_comparison(
    rows: pd.DataFrame,
    method: str,
    reference: str,
    *,
    metric: str = "aser",
    confidence: float = 0.95,
) -> pd.DataFrame:
    """Paired per-trial difference ``method − reference`` with a Student-t interval.

    ``separated`` is true where the whole interval lies below zero, i.e.
    ``method`` is better than ``reference`` at the requested confidence.
    """

    left = rows.loc[rows["method"] == method, ["P", "trial", metric]]
    right = rows.loc[rows["method"] == reference, ["P", "trial", metric]]
    paired = left.merge(right, on=["P", "trial"], suffixes=("_method", "_reference"))
    records = []
    for num_aps, group in paired.groupby("P", sort=True):
        diff = (group[f"{metric}_method"] - group[f"{metric}_reference"]).to_numpy(dtype=float)
        count = diff.size
        mean = float(diff.mean())
        if count > 1:
            half_width = float(stats.t.ppf(0.5 + confidence / 2.0, count - 1) * diff.std(ddof=1) / math.sqrt(count))
        else:
            half_width = math.inf
        records.append(
            {
                "P": int(num_aps),
                "trials": count,
                "mean_diff": mean,
                "ci_low": mean - half_width,
                "ci_high": mean + half_width,
                "separated": bool(mean + half_width < 0),
            }
        )
    return pd.DataFrame.from_records(
        records, columns=["P", "trials", "mean_diff", "ci_low", "ci_high", "separated"]
    )


__all__ = [
    "SUMMARY_COLUMNS",
    "aggregate",
    "average_symbol_error_rate",
    "compute_metrics",
    "paired_comparison",
    "user_detection_error_rate",
]
