"""Label-wise scalar metrics, sign-oriented so that larger means more member-like."""
from __future__ import annotations

import numpy as np

from miaudit.errors import DataValidationError
from miaudit.models import POSTERIOR_FLOOR, PredictionRecord

METRICS = ("entropy", "modified_entropy", "confidence", "loss")


def metric_signals(posteriors, labels, metric: str) -> np.ndarray:
    p = np.asarray(posteriors, dtype=np.float64)
    if metric == "confidence":
        return p.max(axis=1)
    if metric == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log(p), 0.0)
        return plogp.sum(axis=1)
    if labels is None:
        raise DataValidationError(f"metric {metric!r} needs true labels")
    y = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(p))
    p_y = p[rows, y]
    if metric == "loss":
        return np.log(np.maximum(p_y, POSTERIOR_FLOOR))
    if metric == "modified_entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            own = np.where(p_y < 1, (1.0 - p_y) * np.log(p_y), 0.0)
            others = np.where(p > 0, p * np.log1p(-np.minimum(p, 1.0)), 0.0)
        others[rows, y] = 0.0
        mentr = -own - others.sum(axis=1)
        return -mentr
    raise DataValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")


def metric_score(record: PredictionRecord, metric: str) -> float:
    """Scalar membership signal of one record."""
    label = None if record.true_label is None else [record.true_label]
    return float(metric_signals(np.asarray([record.posterior]), label, metric)[0])
