"""Balanced accuracy, empirical ROC / DET curves and low-error-rate operating points."""
from __future__ import annotations

import dataclasses

import numpy as np

from miaudit.calibrate import GroundTruth, _as_truth, candidate_thresholds, decide
from miaudit.errors import ComparisonError, DataValidationError, UndefinedMetricError

DEFAULT_RATES = (0.001, 0.01)


def _both_classes(truth):
    truth = np.asarray(truth, dtype=bool)
    if truth.all() or not truth.any():
        raise UndefinedMetricError("metric undefined: truth contains a single class")
    return truth


def balanced_accuracy(predictions, truth) -> float:
    """``(TPR + TNR) / 2``."""
    pred = np.asarray(predictions, dtype=bool)
    truth = _both_classes(truth)
    if pred.shape != truth.shape:
        raise DataValidationError("predictions and truth differ in length")
    tpr = (pred & truth).sum() / truth.sum()
    tnr = (~pred & ~truth).sum() / (~truth).sum()
    return float((tpr + tnr) / 2)


@dataclasses.dataclass
class RocCurve:
    thresholds: np.ndarray  # descending
    fpr: np.ndarray
    tpr: np.ndarray
    num_members: int
    num_nonmembers: int

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def roc(scores, truth) -> RocCurve:
    """Empirical curve for ``score > t`` over all distinct-score midpoints and +-inf."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if not np.isfinite(s).all():
        raise DataValidationError("scores must be finite")
    if hasattr(scores, "sample_ids") and not isinstance(truth, np.ndarray):
        truth = _as_truth(truth, scores.sample_ids)
    truth = _both_classes(truth)
    cands = candidate_thresholds(s)[::-1]
    u = np.unique(s)
    idx = np.searchsorted(u, s)
    pos_at = np.bincount(idx[truth], minlength=len(u))
    neg_at = np.bincount(idx[~truth], minlength=len(u))
    # descending thresholds: +inf first (nothing flagged), then values u[-1:], u[-2:], ...
    tp = np.concatenate([[0], np.cumsum(pos_at[::-1])])
    fp = np.concatenate([[0], np.cumsum(neg_at[::-1])])
    p, n = int(truth.sum()), int((~truth).sum())
    return RocCurve(cands, fp / n, tp / p, p, n)


def tpr_at_fpr(curve: RocCurve, alpha: float) -> float:
    """Largest realised TPR with FPR <= alpha (no interpolation)."""
    ok = curve.fpr <= alpha
    return float(curve.tpr[ok].max()) if ok.any() else 0.0


def tnr_at_fnr(curve: RocCurve, beta: float) -> float:
    """Largest realised TNR with FNR <= beta."""
    ok = (1.0 - curve.tpr) <= beta
    return float((1.0 - curve.fpr[ok]).max()) if ok.any() else 0.0


def det_curve(scores, truth) -> list[tuple[float, float]]:
    """``(fpr, fnr)`` pairs sorted by fpr ascending."""
    c = roc(scores, truth)
    return list(zip(c.fpr.tolist(), (1.0 - c.tpr).tolist()))


@dataclasses.dataclass
class MetricsReport:
    attack_id: str
    mode: str
    balanced_accuracy: float
    tpr_at_fpr: dict
    tnr_at_fnr: dict
    det_points: list
    resolution_flags: dict = dataclasses.field(default_factory=dict)
    num_members: int = 0
    num_nonmembers: int = 0
    sample_ids: tuple = ()
    calibration: dict | None = None

    def to_dict(self) -> dict:
        return {
            "attack_id": self.attack_id, "mode": self.mode, "balanced_accuracy": self.balanced_accuracy,
            "tpr_at_fpr": {repr(float(k)): v for k, v in sorted(self.tpr_at_fpr.items())},
            "tnr_at_fnr": {repr(float(k)): v for k, v in sorted(self.tnr_at_fnr.items())},
            "det_points": [list(p) for p in self.det_points],
            "resolution_flags": dict(sorted(self.resolution_flags.items())),
            "num_members": self.num_members, "num_nonmembers": self.num_nonmembers,
            "calibration": self.calibration,
        }


def evaluate(scores, cal, truth: GroundTruth, *, alphas=DEFAULT_RATES, betas=DEFAULT_RATES) -> MetricsReport:
    """Full metric suite for one score set and its calibration on the evaluation truth."""
    member = _as_truth(truth, scores.sample_ids)
    pred = decide(scores, cal)
    curve = roc(scores.scores, member)
    flags = {}
    for a in alphas:
        flags[f"fpr<={a}"] = bool(a < 1.0 / curve.num_nonmembers)
    for b in betas:
        flags[f"fnr<={b}"] = bool(b < 1.0 / curve.num_members)
    return MetricsReport(
        scores.attack_id, cal.mode if cal is not None else "audit",
        balanced_accuracy(pred, member),
        {float(a): tpr_at_fpr(curve, a) for a in alphas},
        {float(b): tnr_at_fnr(curve, b) for b in betas},
        list(zip(curve.fpr.tolist(), (1.0 - curve.tpr).tolist())),
        flags, curve.num_members, curve.num_nonmembers, tuple(sorted(scores.sample_ids.tolist())),
        cal.to_dict() if cal is not None else None,
    )


def audit_attack_gap(report_audit: MetricsReport, report_attack: MetricsReport) -> float:
    if report_audit.attack_id != report_attack.attack_id or report_audit.sample_ids != report_attack.sample_ids:
        raise ComparisonError("audit/attack reports must cover the same attack and evaluation set")
    return report_audit.balanced_accuracy - report_attack.balanced_accuracy


def opt_indis(unlearned_report: MetricsReport, retrained_report: MetricsReport, *, retrained_tag: str = "retrained") -> float:
    """|BA on the unlearned model - BA on the retrained model| for one attack.

    Both reports must use a calibration fitted on the retrained model.
    """
    for r in (unlearned_report, retrained_report):
        cal = r.calibration or {}
        if cal.get("kind") != "passthrough" and cal.get("model_tag") != retrained_tag:
            raise ComparisonError(f"{r.attack_id}: calibration was not fitted on the {retrained_tag} model")
    if unlearned_report.attack_id != retrained_report.attack_id or unlearned_report.sample_ids != retrained_report.sample_ids:
        raise ComparisonError("OptIndis compares one attack on one evaluation set")
    return abs(unlearned_report.balanced_accuracy - retrained_report.balanced_accuracy)


def delta_opt_indis(opt_a: float, opt_b: float) -> float:
    return opt_a - opt_b


def fixed_data_audit(pretrained_scores, retrained_scores, cal) -> dict:
    """Forget set scored on the pretrained model (positives) and on the retrained model (negatives)."""
    if pretrained_scores.attack_id != retrained_scores.attack_id or not np.array_equal(
        np.sort(pretrained_scores.sample_ids), np.sort(retrained_scores.sample_ids)
    ):
        raise ComparisonError("fixed-data audit needs the same forget set scored on both models")
    pos = decide(pretrained_scores, cal)
    neg = decide(retrained_scores, cal)
    tpr = float(pos.mean())
    tnr = float(1.0 - neg.mean())
    return {"accuracy": (tpr + tnr) / 2.0, "tpr": tpr, "tnr": tnr}
