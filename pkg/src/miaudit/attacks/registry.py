"""Registry of attacks, each described as (representation, knowledge, classifier).

Every entry maps an :class:`AttackContext` to an :class:`AttackScoreSet`.
``granularity`` says how the score is turned into decisions:

* ``global``      one static threshold
* ``per_class``   one threshold per true label
* ``adaptive``    per-sample threshold already folded into the score; the native
                  decision rule is ``score > 0``
* ``decision``    the attack emits 0/1 decisions itself
"""
from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from miaudit import rng as _rng
from miaudit.attacks.base import AttackContext, AttackScoreSet
from miaudit.attacks.blindmi import blindmi_scores
from miaudit.attacks.lira import lira_scores
from miaudit.attacks.merlin import merlin_scores
from miaudit.attacks.metric import metric_signals
from miaudit.attacks.parametric import parametric_scores, train_attack_classifier
from miaudit.attacks.quantile import quantile_scores, train_quantile_model
from miaudit.attacks.rmia import rmia_scores
from miaudit.errors import ConfigurationError, InsufficientKnowledgeError


@dataclasses.dataclass(frozen=True)
class AttackSpec:
    name: str
    family: str
    representation: str
    knowledge: str
    classifier: str
    granularity: str
    scorer: Callable[[AttackContext], np.ndarray]
    needs_ensemble: bool = False
    min_ensemble: int = 0

    @property
    def per_class(self) -> bool:
        """Uses label-wise calibration or label-wise classifiers."""
        return self.granularity == "per_class" or self.name == "shadow"

    @property
    def calibratable(self) -> bool:
        return self.granularity in ("global", "per_class")

    def score(self, ctx: AttackContext) -> AttackScoreSet:
        if self.needs_ensemble and (ctx.ensemble is None or len(ctx.ensemble) < max(1, self.min_ensemble)):
            have = 0 if ctx.ensemble is None else len(ctx.ensemble)
            raise InsufficientKnowledgeError(f"{self.name} needs >= {max(1, self.min_ensemble)} shadow models, got {have}")
        scores = self.scorer(ctx)
        return AttackScoreSet(
            self.name, ctx.targets.sample_ids, scores, decision_only=self.granularity == "decision",
            knowledge_tag=ctx.knowledge_tag, labels=ctx.targets.labels,
        )


def _metric(kind):
    return lambda ctx: metric_signals(ctx.targets.posteriors, ctx.targets.labels, kind)


def _lira(ctx):
    # in shadow replay a member of one shadow is usually IN the others as well
    return lira_scores(ctx.targets, ctx.ensemble, fallback_global=ctx.knowledge_tag.startswith("shadow-replay"))


def _rmia(ctx):
    return rmia_scores(ctx.model, ctx.targets, ctx.ensemble, ctx.population, ctx.params.rmia_gamma)


def _quantile(ctx):
    p = ctx.params
    qm = train_quantile_model(ctx.reference, p.quantile_alpha, signal=p.quantile_signal, hidden=p.quantile_hidden,
                              seed=_rng.derive_seed(ctx.seed, "quantile"))
    return quantile_scores(ctx.targets, qm)


def _merlin(ctx):
    p = ctx.params
    sigma = p.merlin_sigma if p.merlin_sigma is not None else p.merlin_sigma_scale * ctx.feature_scale
    return merlin_scores(ctx.model, ctx.targets.features, ctx.targets.labels, ctx.targets.sample_ids,
                         sigma, p.merlin_trials, _rng.derive_seed(ctx.seed, "merlin"))


def _parametric(feature, use_topk=False):
    def scorer(ctx):
        p = ctx.params
        k = p.topk if use_topk else None
        num_classes = ctx.model.config.num_classes
        clf = ctx.ensemble.memo(
            ("clf", feature, k, ctx.seed, p.classifier_epochs),
            lambda: train_attack_classifier(ctx.ensemble, feature, k, seed=_rng.derive_seed(ctx.seed, "clf", feature),
                                            epochs=p.classifier_epochs, num_classes=num_classes),
        )
        return parametric_scores(ctx.targets, clf)
    return scorer


def _blindmi(variant):
    def scorer(ctx):
        return blindmi_scores(ctx.targets, ctx.reference, variant, k=ctx.params.blindmi_k,
                              pass_cap=ctx.params.blindmi_pass_cap)
    return scorer


_SHADOW = "Shadow Models"
_REF = "Reference Data"

ATTACKS: dict[str, AttackSpec] = {a.name: a for a in [
    AttackSpec("lira", "LiRA", "Likelihood Ratio", _SHADOW, "Static Threshold", "global", _lira, True, 2),
    AttackSpec("rmia", "RMIA", "Pairwise Likelihood Ratio", _SHADOW, "Adaptive Threshold", "global", _rmia, True, 1),
    AttackSpec("metric-entropy", "Metric MIA", "Labelwise Scalar Metric", _SHADOW, "Labelwise Static Threshold", "per_class", _metric("entropy")),
    AttackSpec("metric-mentropy", "Metric MIA", "Labelwise Scalar Metric", _SHADOW, "Labelwise Static Threshold", "per_class", _metric("modified_entropy")),
    AttackSpec("metric-confidence", "Metric MIA", "Labelwise Scalar Metric", _SHADOW, "Labelwise Static Threshold", "per_class", _metric("confidence")),
    AttackSpec("quantile", "Quantile MIA", "Scalar Metric (Loss)", _REF, "Adaptive Threshold", "adaptive", _quantile),
    AttackSpec("merlin", "Merlin", "Loss Landscape", _SHADOW, "Static Threshold", "global", _merlin),
    AttackSpec("mlleaks1", "MLLeaks1", "Prediction Vector (Top-k)", _SHADOW, "Parametric", "global", _parametric("topk", True), True, 1),
    AttackSpec("mlleaks3", "MLLeaks3", "Scalar Metric", _REF, "Static Threshold", "global", _metric("confidence")),
    AttackSpec("shadow", "ShadowMIA", "Prediction Vector (Posteriors)", _SHADOW, "Parametric", "global", _parametric("per_class_full"), True, 1),
    AttackSpec("blindmi-1class", "Blind-MI", "Differential Shift (Set-based)", _REF, "Geometric Distance", "global", _blindmi("one_class")),
    AttackSpec("blindmi-diffw", "Blind-MI", "Differential Shift (Set-based)", _REF, "Geometric Distance", "decision", _blindmi("diff_w")),
    AttackSpec("blindmi-diffsingle", "Blind-MI", "Differential Shift (Set-based)", _REF, "Geometric Distance", "decision", _blindmi("diff_single")),
    AttackSpec("blindmi-diffbi", "Blind-MI", "Differential Shift (Set-based)", _REF, "Geometric Distance", "decision", _blindmi("diff_bi")),
]}

ATTACK_NAMES = tuple(ATTACKS)


def get_attack(name: str) -> AttackSpec:
    try:
        return ATTACKS[name]
    except KeyError:
        raise ConfigurationError(f"unknown attack {name!r}; registry: {', '.join(ATTACK_NAMES)}") from None


def table1_taxonomy() -> dict:
    """Family -> (representation, knowledge, classifier); nine families."""
    out = {}
    for spec in ATTACKS.values():
        out.setdefault(spec.family, (spec.representation, spec.knowledge, spec.classifier))
    return out
