"""Likelihood-ratio attack on the logit-scaled confidence of the true label."""
from __future__ import annotations

import math

import numpy as np

from miaudit.errors import InsufficientKnowledgeError
from miaudit.models import POSTERIOR_FLOOR

VAR_FLOOR = 1e-6


def logit_confidence(posteriors, labels) -> np.ndarray:
    """``log(p_y / (1 - p_y))`` with ``1 - p_y`` summed from the other classes."""
    p = np.maximum(np.asarray(posteriors, dtype=np.float64), POSTERIOR_FLOOR)
    y = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(p))
    p_y = p[rows, y]
    rest = p.sum(axis=1) - p_y
    return np.log(p_y) - np.log(np.maximum(rest, POSTERIOR_FLOOR))


def _fit(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), max(float(values.var()), VAR_FLOOR)


def _log_normal(x, mu, var):
    return -0.5 * math.log(2 * math.pi * var) - (x - mu) ** 2 / (2 * var)


def lira_from_phi(phi_target: float, phi_in, phi_out) -> float:
    """Online log-likelihood ratio if ``phi_in`` has >= 2 values, else the offline z-score."""
    if len(phi_out) < 2:
        raise InsufficientKnowledgeError("LiRA needs at least 2 OUT observations")
    mu_out, var_out = _fit(phi_out)
    if phi_in is not None and len(phi_in) >= 2:
        mu_in, var_in = _fit(phi_in)
        return _log_normal(phi_target, mu_in, var_in) - _log_normal(phi_target, mu_out, var_out)
    return (phi_target - mu_out) / math.sqrt(var_out)


def lira_scores(targets, ensemble, *, fallback_global: bool = False) -> np.ndarray:
    """Per-sample LiRA scores for a :class:`PredictionSet` against a shadow ensemble.

    With ``fallback_global`` a sample seen OUT by fewer than two shadows is scored
    against the pooled OUT distribution of the whole batch instead of raising.
    """
    phi_t = logit_confidence(targets.posteriors, targets.labels)
    phi_s = np.column_stack([
        logit_confidence(ensemble.posteriors(j, targets.sample_ids, targets.features), targets.labels)
        for j in range(len(ensemble))
    ]) if len(ensemble) else np.zeros((len(targets), 0))
    inside = ensemble.is_member(targets.sample_ids)
    pooled = None
    scores = np.empty(len(targets))
    for n in range(len(targets)):
        out_vals = phi_s[n, ~inside[n]]
        in_vals = phi_s[n, inside[n]]
        if len(out_vals) < 2:
            if not fallback_global:
                raise InsufficientKnowledgeError(
                    f"sample {int(targets.sample_ids[n])} is OUT of only {len(out_vals)} shadow model(s); LiRA needs 2"
                )
            if pooled is None:
                pooled = phi_s[~inside]
                if len(pooled) < 2:
                    raise InsufficientKnowledgeError("no OUT observations anywhere in the batch")
            mu, var = _fit(pooled)
            scores[n] = (phi_t[n] - mu) / math.sqrt(var)
            continue
        scores[n] = lira_from_phi(phi_t[n], in_vals, out_vals)
    return scores


def lira_score(target_record, ensemble, features=None) -> float:
    """Score one :class:`PredictionRecord`; ``features`` are needed if the ensemble cache lacks it."""
    from miaudit.models import PredictionSet

    ps = PredictionSet([target_record.sample_id], [target_record.true_label], np.asarray([target_record.posterior]),
                       features=None if features is None else np.asarray([features], dtype=np.float64))
    return float(lira_scores(ps, ensemble)[0])
