"""Loss-landscape attack: how often does noise around a sample raise its loss?"""
from __future__ import annotations

import numpy as np

from miaudit import rng as _rng
from miaudit.errors import DataValidationError
from miaudit.models import log_softmax


def merlin_scores(model, features, labels, sample_ids, sigma: float, trials: int = 100, seed: int = 0) -> np.ndarray:
    """Fraction of ``trials`` Gaussian perturbations with strictly larger cross-entropy.

    Noise for a sample depends only on ``(seed, sample_id)``, so scoring the same
    sample against two models uses identical perturbations.
    """
    if not sigma > 0 or int(trials) < 1:
        raise DataValidationError("merlin needs sigma > 0 and trials >= 1")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise DataValidationError("merlin feature dimensionality does not match the model")
    n, d = x.shape
    noise = np.stack([_rng.stream(seed, "merlin", int(s)).standard_normal((trials, d)) for s in sample_ids]) if n else np.zeros((0, trials, d))
    base = -log_softmax(model.logits(x))[np.arange(n), y]
    pert = x[:, None, :] + sigma * noise
    logp = log_softmax(model.logits(pert.reshape(n * trials, d))).reshape(n, trials, -1)
    pert_loss = -np.take_along_axis(logp, y[:, None, None], axis=2)[..., 0]
    return (pert_loss > base[:, None]).mean(axis=1)


def merlin_score(model, sample_features, label: int, sigma: float, trials: int, seed: int, sample_id: int = 0) -> float:
    return float(merlin_scores(model, np.asarray([sample_features]), [label], [sample_id], sigma, trials, seed)[0])
