"""Turning score sets into membership decisions under audit or attack mode.

Audit mode searches thresholds on the evaluation set's ground truth.  Attack
mode replays the attack against every shadow model (the other shadows acting as
its knowledge), pools the shadow ground truth, and runs the same search there.
"""
from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from miaudit.attacks.base import AttackContext, AttackParams, AttackScoreSet, ShadowEnsemble
from miaudit.attacks.registry import ATTACKS, AttackSpec, get_attack
from miaudit.dataspec import LabeledDataset
from miaudit.errors import (
    CalibrationCoverageError,
    CalibrationNotApplicable,
    ConfigurationError,
    DataValidationError,
    InsufficientKnowledgeError,
)
from miaudit.models import predict

MODES = ("audit", "attack")


class GroundTruth:
    """Evaluation membership labels with a read counter (attack-mode isolation check)."""

    def __init__(self, membership: dict):
        self._m = {int(k): bool(v) for k, v in membership.items()}
        self.reads = 0

    @classmethod
    def from_arrays(cls, sample_ids, membership) -> "GroundTruth":
        return cls(dict(zip(np.asarray(sample_ids).tolist(), np.asarray(membership).tolist())))

    def __len__(self):
        return len(self._m)

    def ids(self) -> set:
        return set(self._m)

    def lookup(self, sample_ids) -> np.ndarray:
        ids = np.asarray(sample_ids).tolist()
        self.reads += len(ids)
        try:
            return np.array([self._m[i] for i in ids], dtype=bool)
        except KeyError as exc:
            raise DataValidationError(f"no ground-truth membership for sample {exc.args[0]}") from None


def _as_truth(truth, sample_ids) -> np.ndarray:
    if isinstance(truth, GroundTruth):
        return truth.lookup(sample_ids)
    if isinstance(truth, dict):
        return GroundTruth(truth).lookup(sample_ids)
    arr = np.asarray(truth, dtype=bool)
    if arr.shape != np.shape(sample_ids):
        raise DataValidationError("truth must cover every scored sample")
    return arr


@dataclasses.dataclass
class CalibrationResult:
    attack_id: str
    mode: str
    kind: str  # global | per_class | zero | passthrough
    threshold: float | None = None
    per_class: dict = dataclasses.field(default_factory=dict)
    objective_value: float = float("nan")
    provenance: str = ""
    model_tag: str = ""

    def to_dict(self) -> dict:
        enc = _encode_float
        if self.kind == "per_class":
            thresholds = {str(k): enc(v) for k, v in sorted(self.per_class.items())}
        elif self.kind in ("global", "zero"):
            thresholds = enc(self.threshold)
        else:
            thresholds = None
        return {
            "attack_id": self.attack_id, "mode": self.mode, "kind": self.kind, "thresholds": thresholds,
            "objective_value": enc(self.objective_value), "provenance": self.provenance, "model_tag": self.model_tag,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        dec = _decode_float
        kind = d["kind"]
        out = cls(d["attack_id"], d["mode"], kind, objective_value=dec(d["objective_value"]),
                  provenance=d.get("provenance", ""), model_tag=d.get("model_tag", ""))
        if kind == "per_class":
            out.per_class = {int(k): dec(v) for k, v in d["thresholds"].items()}
        elif kind in ("global", "zero"):
            out.threshold = dec(d["thresholds"])
        return out


def _encode_float(x):
    if x is None:
        return None
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return float(x)


def _decode_float(x):
    if isinstance(x, str):
        return float(x.replace("+", ""))
    return x


def candidate_thresholds(scores) -> np.ndarray:
    """``-inf``, midpoints between consecutive distinct scores, ``+inf`` (ascending)."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    lo, hi = u[:-1], u[1:]
    mid = lo + (hi - lo) / 2.0
    mid = np.where(mid >= hi, lo, mid)
    return np.concatenate([[-np.inf], mid, [np.inf]])


def _best_threshold(scores, members, n_pos: int, n_neg: int):
    """Maximise ``tp * n_neg + tn * n_pos`` (balanced accuracy up to scale); ties -> largest threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    members = np.asarray(members, dtype=bool)
    cands = candidate_thresholds(scores)
    u = np.unique(scores)
    idx = np.searchsorted(u, scores)
    pos_at = np.bincount(idx[members], minlength=len(u)).astype(np.int64)
    neg_at = np.bincount(idx[~members], minlength=len(u)).astype(np.int64)
    # candidate j predicts member for the distinct values u[j:], j = 0..len(u)
    tp = np.concatenate([np.cumsum(pos_at[::-1])[::-1], [0]])
    fp = np.concatenate([np.cumsum(neg_at[::-1])[::-1], [0]])
    tn = neg_at.sum() - fp
    objective = tp * int(n_neg) + tn * int(n_pos)
    best = int(np.flatnonzero(objective == objective.max())[-1])
    return float(cands[best]), int(objective[best]), int(tp[best]), int(tn[best])


def search_thresholds(scores, members, labels=None, granularity: str = "global"):
    """Exhaustive threshold search; returns ``(kind, threshold, per_class, balanced_accuracy)``.

    Per-class thresholds maximise each class's contribution to the *overall*
    balanced accuracy, which is separable across classes.
    """
    members = np.asarray(members, dtype=bool)
    n_pos, n_neg = int(members.sum()), int((~members).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataValidationError("calibration data needs both members and non-members")
    if granularity == "global":
        tau, _, tp, tn = _best_threshold(scores, members, n_pos, n_neg)
        return "global", tau, {}, _ba(tp, tn, n_pos, n_neg)
    if granularity != "per_class":
        raise ConfigurationError(f"unknown calibration granularity {granularity!r}")
    if labels is None:
        raise DataValidationError("per-class calibration needs labels")
    labels = np.asarray(labels)
    per_class, tp_all, tn_all = {}, 0, 0
    for c in np.unique(labels):
        mask = labels == c
        tau, _, tp, tn = _best_threshold(np.asarray(scores)[mask], members[mask], n_pos, n_neg)
        per_class[int(c)] = tau
        tp_all, tn_all = tp_all + tp, tn_all + tn
    return "per_class", None, per_class, _ba(tp_all, tn_all, n_pos, n_neg)


def _ba(tp, tn, n_pos, n_neg) -> float:
    # same float expression as metrics.balanced_accuracy so reported values agree exactly
    return float((np.float64(tp) / n_pos + np.float64(tn) / n_neg) / 2)


def _native_granularity(attack_id: str, granularity: str | None) -> str:
    if granularity is not None:
        return granularity
    spec = ATTACKS.get(attack_id)
    return spec.granularity if spec is not None else "global"


def oracle_calibrate(scores: AttackScoreSet, truth, granularity: str | None = None,
                     objective: str = "balanced_accuracy", *, provenance: str = "", model_tag: str = "") -> CalibrationResult:
    """Audit mode: pick the threshold(s) maximising balanced accuracy on the ground truth."""
    if objective != "balanced_accuracy":
        raise ConfigurationError(f"unsupported calibration objective {objective!r}")
    if scores.decision_only:
        raise CalibrationNotApplicable(f"{scores.attack_id} emits decisions; calibration does not apply")
    gran = _native_granularity(scores.attack_id, granularity)
    if gran == "adaptive":
        gran = "global"
    members = _as_truth(truth, scores.sample_ids)
    kind, tau, per_class, value = search_thresholds(scores.scores, members, scores.labels, gran)
    return CalibrationResult(scores.attack_id, "audit", kind, tau, per_class, value,
                             provenance or f"oracle: ground truth of {len(scores)} evaluation records", model_tag)


def replay_contexts(ensemble: ShadowEnsemble, *, reference_data: LabeledDataset | None,
                    population: LabeledDataset | None, params: AttackParams, seed: int, feature_scale: float):
    """One attack context per shadow model, the others acting as its knowledge."""
    for i, model in enumerate(ensemble.models):
        sm, sn = ensemble.splits[i]
        members = LabeledDataset.concat([sm, sn])
        targets = predict(model, members)
        targets.membership = np.isin(targets.sample_ids, sm.sample_ids)
        ref = reference_data.exclude(sn.sample_ids.tolist()) if reference_data is not None else None
        yield AttackContext(
            model=model, targets=targets, ensemble=ensemble.without(i), reference_data=ref,
            population=population, params=params, seed=seed, feature_scale=feature_scale,
            knowledge_tag=f"shadow-replay-{i}",
        )


def replay_scores(spec: AttackSpec, ensemble: ShadowEnsemble, **kw):
    """Pooled ``(scores, membership, labels)`` of the attack replayed on every shadow model."""
    if spec.needs_ensemble and len(ensemble) - 1 < max(1, spec.min_ensemble):
        raise InsufficientKnowledgeError(
            f"{spec.name} needs {max(1, spec.min_ensemble)} knowledge models per replay; ensemble has {len(ensemble)}"
        )
    scores, members, labels = [], [], []
    for ctx in replay_contexts(ensemble, **kw):
        s = spec.score(ctx)
        scores.append(s.scores)
        members.append(ctx.targets.membership)
        labels.append(ctx.targets.labels)
    return np.concatenate(scores), np.concatenate(members), np.concatenate(labels)


def shadow_calibrate(attack_id: str, ensemble: ShadowEnsemble, granularity: str | None = None,
                     objective: str = "balanced_accuracy", *, reference_data=None, population=None,
                     params: AttackParams | None = None, seed: int = 0, feature_scale: float = 1.0) -> CalibrationResult:
    """Attack mode: calibrate on pooled leave-one-out shadow replays; never reads evaluation truth."""
    if objective != "balanced_accuracy":
        raise ConfigurationError(f"unsupported calibration objective {objective!r}")
    spec = get_attack(attack_id)
    if spec.granularity == "decision":
        raise CalibrationNotApplicable(f"{attack_id} emits decisions; calibration does not apply")
    if spec.granularity == "adaptive":
        return CalibrationResult(attack_id, "attack", "zero", 0.0, {}, float("nan"),
                                 "native adaptive threshold (score > 0); no shadow data used")
    if ensemble is None or len(ensemble) == 0:
        raise InsufficientKnowledgeError(f"{attack_id}: attack-mode calibration needs shadow models")
    gran = granularity or spec.granularity
    scores, members, labels = replay_scores(
        spec, ensemble, reference_data=reference_data, population=population,
        params=params or AttackParams(), seed=seed, feature_scale=feature_scale,
    )
    kind, tau, per_class, value = search_thresholds(scores, members, labels, gran)
    prov = f"shadow replay: {len(ensemble)} shadow models, {len(scores)} pooled auxiliary records"
    return CalibrationResult(attack_id, "attack", kind, tau, per_class, value, prov)


def threshold_calibrate_arrays(attack_id, scores, members, labels=None, granularity="global", *,
                               mode="audit", provenance="", model_tag="") -> CalibrationResult:
    kind, tau, per_class, value = search_thresholds(scores, members, labels, granularity)
    return CalibrationResult(attack_id, mode, kind, tau, per_class, value, provenance, model_tag)


def decide(scores: AttackScoreSet, cal: CalibrationResult | None, labels=None) -> np.ndarray:
    """Member iff ``score > threshold`` (strict); decision-only sets pass through."""
    s = scores.scores
    if scores.decision_only or (cal is not None and cal.kind == "passthrough"):
        return s > 0.5
    if cal is None:
        raise ConfigurationError("a calibration result is required for scalar scores")
    if cal.kind in ("global", "zero"):
        return s > cal.threshold
    labels = scores.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise DataValidationError("per-class decisions need labels")
    out = np.empty(len(s), dtype=bool)
    for c in np.unique(labels):
        if int(c) not in cal.per_class:
            raise CalibrationCoverageError(f"{cal.attack_id}: no threshold calibrated for class {int(c)}")
        mask = labels == c
        out[mask] = s[mask] > cal.per_class[int(c)]
    return out


def passthrough(attack_id: str, mode: str) -> CalibrationResult:
    return CalibrationResult(attack_id, mode, "passthrough", None, {}, float("nan"), "decision-only attack")
