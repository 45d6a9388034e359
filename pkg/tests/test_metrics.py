import math

import numpy as np
import pytest

import oracles
from miaudit.attacks import AttackScoreSet
from miaudit.calibrate import CalibrationResult, GroundTruth, oracle_calibrate
from miaudit.errors import ComparisonError, UndefinedMetricError
from miaudit.metrics import (
    audit_attack_gap,
    balanced_accuracy,
    delta_opt_indis,
    det_curve,
    evaluate,
    fixed_data_audit,
    opt_indis,
    roc,
    tnr_at_fnr,
    tpr_at_fpr,
)

FOUR_SCORES = [0.9, 0.4, 0.6, 0.1]
FOUR_TRUTH = [True, True, False, False]


def score_set(scores, name="lira", ids=None):
    ids = np.arange(len(scores)) if ids is None else ids
    return AttackScoreSet(name, ids, scores)


class TestBalancedAccuracy:
    def test_definition(self):
        truth = [True] * 5 + [False] * 5
        pred = [True] * 4 + [False] + [False] * 3 + [True] * 2
        assert math.isclose(balanced_accuracy(pred, truth), 0.7)
        assert balanced_accuracy(truth, truth) == 1.0
        assert balanced_accuracy([True] * 10, truth) == 0.5

    def test_single_class_truth(self):
        with pytest.raises(UndefinedMetricError):
            balanced_accuracy([True, False], [True, True])


class TestCurves:
    def test_separated_scores_reach_corner(self):
        c = roc([0.9, 0.8, 0.1], [True, True, False])
        assert (0.0, 1.0) in list(zip(c.fpr.tolist(), c.tpr.tolist()))
        assert (0.0, 0.0) in det_curve([0.9, 0.8, 0.1], [True, True, False])

    def test_identical_multisets_lie_on_diagonal(self):
        scores = [0.1, 0.5, 0.5, 0.9, 0.1, 0.5, 0.5, 0.9]
        truth = [True] * 4 + [False] * 4
        c = roc(scores, truth)
        assert np.array_equal(c.fpr, c.tpr)
        assert all(math.isclose(f + n, 1.0) for f, n in det_curve(scores, truth))

    def test_four_point_curve_by_enumeration(self):
        c = roc(FOUR_SCORES, FOUR_TRUTH)
        assert c.points == oracles.roc_points(FOUR_SCORES, FOUR_TRUTH)
        assert [(p[1], p[2]) for p in c.points] == [(0, 0), (0, 0.5), (0.5, 0.5), (0.5, 1), (1, 1)]

    def test_endpoints_and_monotonicity(self, rng):
        for _ in range(30):
            s = rng.integers(0, 5, 12).astype(float)
            t = rng.random(12) < 0.5
            t[:2] = (True, False)
            c = roc(s, t)
            assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
            assert (np.diff(c.fpr) >= 0).all() and (np.diff(c.tpr) >= 0).all()
            fnr = [n for _, n in det_curve(s, t)]
            assert all(a >= b for a, b in zip(fnr, fnr[1:]))

    def test_tpr_at_fpr_example(self):
        scores = [0.9, 0.8, 0.4, 0.85, 0.2, 0.1]
        truth = [True, True, True, False, False, False]
        assert tpr_at_fpr(roc(scores, truth), 1 / 3) == 1.0
        assert tpr_at_fpr(roc(scores, truth), 1.0) == 1.0
        assert tpr_at_fpr(roc(scores, truth), 0.0) == 1 / 3

    def test_no_qualifying_point_gives_zero(self):
        c = roc([0.5, 0.5], [True, False])
        assert tnr_at_fnr(c, 0.0) == 0.0

    def test_matches_bruteforce(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 13))
            s = (rng.integers(0, 7, n) / 3.0).tolist()
            t = (rng.random(n) < 0.5).tolist()
            t[0], t[1] = True, False
            c = roc(s, t)
            for a in (0.0, 0.1, 1 / 3, 0.5, 1.0):
                assert tpr_at_fpr(c, a) == oracles.tpr_at_fpr(s, t, a)
                assert tnr_at_fnr(c, a) == oracles.tnr_at_fnr(s, t, a)
            want_det = [(f, 1 - tp) for _, f, tp in oracles.roc_points(s, t)]
            assert det_curve(s, t) == want_det

    def test_non_finite_scores(self):
        from miaudit.errors import DataValidationError

        with pytest.raises(DataValidationError):
            roc([math.inf, 0.0], [True, False])


def test_evaluate_report():
    truth = GroundTruth.from_arrays(range(4), FOUR_TRUTH)
    s = score_set(FOUR_SCORES)
    cal = oracle_calibrate(s, truth)
    rep = evaluate(s, cal, truth, alphas=(0.001, 0.5), betas=(0.5,))
    assert rep.balanced_accuracy == 0.75 and rep.mode == "audit"
    assert rep.tpr_at_fpr == {0.001: 0.5, 0.5: 1.0}
    assert rep.tnr_at_fnr == {0.5: 1.0}
    # two non-members cannot resolve an FPR of 0.1%
    assert rep.resolution_flags["fpr<=0.001"] is True
    assert rep.resolution_flags["fpr<=0.5"] is False
    assert truth.reads > 0


def report(ba_scores, ids=(0, 1, 2, 3), tag="retrained", mode="audit"):
    truth = GroundTruth.from_arrays(ids, FOUR_TRUTH)
    s = score_set(ba_scores, ids=np.asarray(ids))
    cal = oracle_calibrate(s, truth, model_tag=tag)
    return evaluate(s, cal, truth)


class TestComparisons:
    def test_gap(self):
        audit = report(FOUR_SCORES)
        attack_cal = CalibrationResult("lira", "attack", "global", 0.95)
        truth = GroundTruth.from_arrays(range(4), FOUR_TRUTH)
        attack = evaluate(score_set(FOUR_SCORES), attack_cal, truth)
        assert audit_attack_gap(audit, attack) == 0.25
        assert audit_attack_gap(audit, audit) == 0.0

    def test_gap_needs_same_set(self):
        with pytest.raises(ComparisonError):
            audit_attack_gap(report(FOUR_SCORES), report(FOUR_SCORES, ids=(4, 5, 6, 7)))

    def test_opt_indis(self):
        same = report(FOUR_SCORES)
        assert opt_indis(same, same) == 0.0
        perfect = report([0.9, 0.8, 0.2, 0.1])
        assert opt_indis(perfect, same) == 0.25
        assert delta_opt_indis(0.25, 0.1) == -delta_opt_indis(0.1, 0.25)

    def test_opt_indis_provenance(self):
        with pytest.raises(ComparisonError, match="retrained"):
            opt_indis(report(FOUR_SCORES, tag="original"), report(FOUR_SCORES))

    def test_fixed_data(self):
        cal = CalibrationResult("lira", "audit", "global", 0.5)
        pre = score_set([0.9, 0.8, 0.3])
        post = score_set([0.1, 0.6, 0.2])
        out = fixed_data_audit(pre, post, cal)
        assert math.isclose(out["tpr"], 2 / 3) and math.isclose(out["tnr"], 2 / 3)
        assert math.isclose(out["accuracy"], 2 / 3)
        with pytest.raises(ComparisonError):
            fixed_data_audit(pre, score_set([0.1, 0.2, 0.3], ids=np.array([5, 6, 7])), cal)
