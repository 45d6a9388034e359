"""Pairwise likelihood-ratio attack against a reference population."""
from __future__ import annotations

import numpy as np

from miaudit.errors import DataValidationError, InsufficientKnowledgeError
from miaudit.models import predict


def reference_probability(ensemble, sample_ids, features, labels) -> np.ndarray:
    """Mean true-label probability across all shadow models."""
    if len(ensemble) == 0:
        raise InsufficientKnowledgeError("RMIA needs a non-empty shadow ensemble")
    rows = np.arange(len(labels))
    probs = [ensemble.posteriors(j, sample_ids, features)[rows, labels] for j in range(len(ensemble))]
    return np.mean(probs, axis=0)


def rmia_from_ratios(lr_targets, lr_population, gamma: float) -> np.ndarray:
    """Fraction of population points ``z`` with ``LR(x) / LR(z) >= gamma``."""
    if not gamma > 0:
        raise DataValidationError("gamma must be positive")
    lr_population = np.asarray(lr_population, dtype=np.float64)
    if lr_population.size == 0:
        raise InsufficientKnowledgeError("RMIA population is empty")
    ratios = np.asarray(lr_targets, dtype=np.float64)[:, None] / lr_population[None, :]
    return (ratios >= gamma).mean(axis=1)


def rmia_scores(model, targets, ensemble, population, gamma: float = 1.0) -> np.ndarray:
    if population is None or len(population) == 0:
        raise InsufficientKnowledgeError("RMIA population is empty")
    rows = np.arange(len(targets))
    lr_x = targets.posteriors[rows, targets.labels] / reference_probability(
        ensemble, targets.sample_ids, targets.features, targets.labels)
    pop = predict(model, population, keep_features=False)
    lr_z = pop.posteriors[np.arange(len(pop)), pop.labels] / reference_probability(
        ensemble, population.sample_ids, population.features, population.labels)
    return rmia_from_ratios(lr_x, lr_z, gamma)


def rmia_score(target_record, ensemble, population_records, gamma: float = 1.0, *,
               target_reference=None, population_reference=None) -> float:
    """Single-record form over :class:`PredictionRecord` inputs.

    ``*_reference`` give the shadow-mean true-label probabilities; when omitted
    they are read from the ensemble's prediction cache by sample id.
    """
    def p_ref(rec):
        return float(np.mean([ensemble.cached(j, rec.sample_id)[rec.true_label] for j in range(len(ensemble))]))

    ref_x = target_reference if target_reference is not None else p_ref(target_record)
    lr_x = target_record.posterior[target_record.true_label] / ref_x
    if population_reference is None:
        population_reference = [p_ref(r) for r in population_records]
    lr_z = [r.posterior[r.true_label] / q for r, q in zip(population_records, population_reference)]
    return float(rmia_from_ratios([lr_x], lr_z, gamma)[0])
