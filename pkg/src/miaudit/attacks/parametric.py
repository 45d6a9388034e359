"""Shadow-trained binary attack classifiers (ShadowMIA / MLLeaks1 style)."""
from __future__ import annotations

import dataclasses

import numpy as np

from miaudit import rng as _rng
from miaudit.dataspec import LabeledDataset
from miaudit.errors import ConfigurationError, DataValidationError, InsufficientKnowledgeError
from miaudit.models import POSTERIOR_FLOOR, ModelConfig, TrainConfig, TrainedModel, stable_posteriors, train_sgd

FEATURES = ("full_posterior", "topk", "per_class_full")


def attack_features(posteriors, feature: str, k: int | None = None) -> np.ndarray:
    """Log-posterior features; ``topk`` sorts descending and truncates."""
    p = np.maximum(np.asarray(posteriors, dtype=np.float64), POSTERIOR_FLOOR)
    if feature == "topk":
        if k is None or k < 1:
            raise ConfigurationError("topk features need k >= 1")
        p = -np.sort(-p, axis=1)[:, :k]
    elif feature not in ("full_posterior", "per_class_full"):
        raise ConfigurationError(f"unknown attack feature {feature!r}")
    return np.log(p)


@dataclasses.dataclass(eq=False)
class _Binary:
    model: TrainedModel
    mean: np.ndarray
    std: np.ndarray

    def member_probability(self, feats) -> np.ndarray:
        return stable_posteriors(self.model.logits((feats - self.mean) / self.std))[:, 1]


@dataclasses.dataclass(eq=False)
class AttackClassifier:
    feature: str
    k: int | None
    heads: dict  # label -> _Binary, or {None: _Binary}

    def score(self, posteriors, labels=None) -> np.ndarray:
        feats = attack_features(posteriors, self.feature, self.k)
        if self.feature != "per_class_full":
            return self.heads[None].member_probability(feats)
        if labels is None:
            raise DataValidationError("per-class attack classifier needs true labels")
        labels = np.asarray(labels)
        out = np.empty(len(feats))
        for c in np.unique(labels):
            if int(c) not in self.heads:
                raise InsufficientKnowledgeError(f"no attack classifier for class {int(c)}")
            mask = labels == c
            out[mask] = self.heads[int(c)].member_probability(feats[mask])
        return out


def _fit_binary(x, y, seed: int, epochs: int, hidden: int = 32) -> _Binary:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    ds = LabeledDataset(np.arange(len(x)), (x - mean) / std, y.astype(np.int64), 2)
    mcfg = ModelConfig(x.shape[1], 2, (hidden,), "relu", init_seed=_rng.derive_seed(seed, "init"))
    tcfg = TrainConfig(epochs=epochs, batch_size=64, learning_rate=0.05, momentum=0.9, weight_decay=1e-4,
                       seed=_rng.derive_seed(seed, "train"))
    return _Binary(train_sgd(ds, mcfg, tcfg, tag="attack-classifier"), mean, std)


def shadow_training_pairs(ensemble):
    """(posteriors, labels, membership bit) pooled over every shadow model."""
    posts, labels, bits = [], [], []
    for j, (sm, sn) in enumerate(ensemble.splits):
        for ds, bit in ((sm, 1), (sn, 0)):
            posts.append(ensemble.posteriors(j, ds.sample_ids, ds.features))
            labels.append(ds.labels)
            bits.append(np.full(len(ds), bit))
    return np.concatenate(posts), np.concatenate(labels), np.concatenate(bits)


def train_attack_classifier(ensemble, feature: str, k: int | None = None, *, seed: int = 0,
                            epochs: int = 60, num_classes: int | None = None) -> AttackClassifier:
    if len(ensemble) == 0:
        raise InsufficientKnowledgeError("attack classifier needs at least one shadow model")
    posts, labels, bits = shadow_training_pairs(ensemble)
    feats = attack_features(posts, feature, k)
    if feature != "per_class_full":
        return AttackClassifier(feature, k, {None: _fit_binary(feats, bits, seed, epochs)})
    n_cls = num_classes or posts.shape[1]
    heads = {}
    for c in range(n_cls):
        mask = labels == c
        if not mask.any():
            raise InsufficientKnowledgeError(f"no shadow examples for class {c}")
        heads[c] = _fit_binary(feats[mask], bits[mask], _rng.derive_seed(seed, "class", c), epochs)
    return AttackClassifier(feature, k, heads)


def parametric_scores(targets, clf: AttackClassifier) -> np.ndarray:
    return clf.score(targets.posteriors, targets.labels)
