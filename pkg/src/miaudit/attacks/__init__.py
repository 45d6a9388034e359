"""Membership inference attacks as (representation, knowledge, classifier) triples."""
from miaudit.attacks.base import AttackContext, AttackParams, AttackScoreSet, ShadowEnsemble
from miaudit.attacks.blindmi import blindmi_scores
from miaudit.attacks.lira import lira_from_phi, lira_score, lira_scores, logit_confidence
from miaudit.attacks.merlin import merlin_score, merlin_scores
from miaudit.attacks.metric import metric_score, metric_signals
from miaudit.attacks.parametric import AttackClassifier, attack_features, parametric_scores, train_attack_classifier
from miaudit.attacks.quantile import QuantileModel, pinball_loss, quantile_score, quantile_scores, train_quantile_model
from miaudit.attacks.registry import ATTACK_NAMES, ATTACKS, AttackSpec, get_attack, table1_taxonomy
from miaudit.attacks.rmia import rmia_from_ratios, rmia_score, rmia_scores

__all__ = [
    "ATTACKS", "ATTACK_NAMES", "AttackClassifier", "AttackContext", "AttackParams", "AttackScoreSet", "AttackSpec",
    "QuantileModel", "ShadowEnsemble", "attack_features", "blindmi_scores", "get_attack", "lira_from_phi",
    "lira_score", "lira_scores", "logit_confidence", "merlin_score", "merlin_scores", "metric_score",
    "metric_signals", "parametric_scores", "pinball_loss", "quantile_score", "quantile_scores", "rmia_from_ratios",
    "rmia_score", "rmia_scores", "table1_taxonomy", "train_attack_classifier", "train_quantile_model",
]
