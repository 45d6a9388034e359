"""End-to-end audit runs: data, target, shadows, scores, calibration, decisions, metrics."""
from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import logging
import math
from functools import cached_property, reduce

import numpy as np

from miaudit import __version__
from miaudit import rng as _rng
from miaudit.attacks import AttackContext, AttackScoreSet, ShadowEnsemble, get_attack
from miaudit.calibrate import (
    GroundTruth,
    _encode_float,
    decide,
    oracle_calibrate,
    passthrough,
    shadow_calibrate,
    threshold_calibrate_arrays,
)
from miaudit.dataspec import (
    LabeledDataset,
    balanced_eval_sets,
    coarsen_labels,
    forget_split,
    generate_synthetic,
    inject_mislabels,
    shadow_subsample,
    split_protocol,
)
from miaudit.errors import ConfigurationError, MiauditError
from miaudit.metrics import MetricsReport, evaluate, fixed_data_audit, opt_indis
from miaudit.models import (
    DPConfig,
    PredictionSet,
    TrainedModel,
    finetune,
    generalization_gap,
    predict,
    retrain_reference,
    train,
    unlearn_approx,
)
from miaudit.pipeline.manifest import ExperimentManifest

log = logging.getLogger(__name__)

STAGES = ("generate", "split", "mislabel", "train_target", "train_shadows", "score", "calibrate", "decide", "metrics")
SWEEP_AXES = ("mislabel_portion", "epochs", "capacity_preset", "dp_noise")
PRETRAIN_ID_OFFSET = 1_000_000_000


class StageError(MiauditError):
    """A fatal failure, tagged with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


def _error_record(stage: str, exc: BaseException) -> dict:
    return {"stage": stage, "type": type(exc).__name__, "message": str(exc)}


def _clean(x):
    """JSON-safe copy: tuples to lists, non-finite floats to strings, numpy scalars to Python."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return _encode_float(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclasses.dataclass
class ReportBundle:
    scenario: str
    cells: dict  # (attack, mode) -> MetricsReport | error dict
    model_summary: dict
    provenance: dict
    trace: list = dataclasses.field(default_factory=list)
    sections: dict = dataclasses.field(default_factory=dict)

    def cell(self, attack: str, mode: str):
        return self.cells[(attack, mode)]

    def ok(self, attack: str, mode: str) -> bool:
        return isinstance(self.cells.get((attack, mode)), MetricsReport)

    def errors(self) -> dict:
        return {k: v for k, v in self.cells.items() if not isinstance(v, MetricsReport)}

    def cells_dict(self) -> list:
        out = []
        for (attack, mode), c in sorted(self.cells.items()):
            if isinstance(c, MetricsReport):
                out.append(c.to_dict())
            else:
                out.append({"attack_id": attack, "mode": mode, "error": c})
        return out

    def to_dict(self) -> dict:
        return _clean({
            "scenario": self.scenario, "cells": self.cells_dict(), "model_summary": self.model_summary,
            "provenance": self.provenance, "trace": self.trace, "sections": self.sections,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ReportBundle":
        cells = {}
        for c in d["cells"]:
            key = (c["attack_id"], c["mode"])
            if "error" in c:
                cells[key] = c["error"]
                continue
            cells[key] = MetricsReport(
                c["attack_id"], c["mode"], c["balanced_accuracy"],
                {float(k): v for k, v in c["tpr_at_fpr"].items()}, {float(k): v for k, v in c["tnr_at_fnr"].items()},
                [tuple(p) for p in c["det_points"]], c["resolution_flags"], c["num_members"], c["num_nonmembers"],
                (), c["calibration"],
            )
        return cls(d["scenario"], cells, d["model_summary"], d["provenance"], d.get("trace", []), d.get("sections", {}))


@dataclasses.dataclass
class Prepared:
    source: LabeledDataset
    bundle: object  # SplitBundle
    eval_members: LabeledDataset
    eval_nonmembers: LabeledDataset
    pretrain: LabeledDataset | None = None

    @cached_property
    def eval_set(self) -> LabeledDataset:
        return LabeledDataset.concat([self.eval_members, self.eval_nonmembers])

    def truth(self) -> GroundTruth:
        ids = np.concatenate([self.eval_members.sample_ids, self.eval_nonmembers.sample_ids])
        bits = np.concatenate([np.ones(len(self.eval_members), bool), np.zeros(len(self.eval_nonmembers), bool)])
        return GroundTruth.from_arrays(ids, bits)


class Session:
    """Lazily evaluated stages of one experiment; each stage runs at most once.

    ``target`` and ``shadow_models`` may be supplied to skip training (sweeps
    reuse checkpointed models this way).
    """

    def __init__(self, manifest: ExperimentManifest, *, workers: int | None = None,
                 target: TrainedModel | None = None, shadow_models: list | None = None):
        self.m = manifest.validate()
        self.workers = int(workers or manifest.workers)
        self.trace: list[str] = []
        self._target = target
        self._shadow_models = shadow_models
        self._scores: dict = {}
        self._cals: dict = {}
        self.isolation_reads = None

    # -- helpers ---------------------------------------------------------
    def seed(self, *names) -> int:
        return _rng.derive_seed(self.m.seed, *names)

    def _mark(self, stage: str):
        if stage not in self.trace:
            self.trace.append(stage)
            log.info("%s: stage %s", self.m.name, stage)

    def _map(self, fn, items):
        items = list(items)
        if self.workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with concurrent.futures.ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(fn, items))

    @property
    def needs_shadows(self) -> bool:
        return "attack" in self.m.modes or any(get_attack(a).needs_ensemble for a in self.m.attacks)

    # -- data --------------------------------------------------------------
    @cached_property
    def prepared(self) -> Prepared:
        m = self.m
        self._mark("generate")
        try:
            spec = dataclasses.replace(m.data, seed=self.seed("data"))
            source = coarsen_labels(generate_synthetic(spec), m.superclass_group)
            pretrain = None
            pt = m.post_training
            if pt is not None and pt.kind == "finetune":
                pspec = dataclasses.replace(spec, per_class_count=pt.pretrain_per_class_count, seed=self.seed("pretrain-data"))
                raw = coarsen_labels(generate_synthetic(pspec), m.superclass_group)
                pretrain = LabeledDataset(raw.sample_ids + PRETRAIN_ID_OFFSET, raw.features, raw.labels, raw.num_classes)
        except Exception as exc:
            raise StageError("generate", exc) from exc
        self._mark("split")
        try:
            bundle = split_protocol(source, m.split_fractions, self.seed("split"))
        except Exception as exc:
            raise StageError("split", exc) from exc
        self._mark("mislabel")
        if m.mislabel_portion > 0:
            try:
                bundle = dataclasses.replace(bundle, d_train=inject_mislabels(bundle.d_train, m.mislabel_portion, self.seed("mislabel", "train")))
                if m.mislabel_aux:
                    bundle = dataclasses.replace(
                        bundle, d_aux_train=inject_mislabels(bundle.d_aux_train, m.mislabel_portion, self.seed("mislabel", "aux")))
            except Exception as exc:
                raise StageError("mislabel", exc) from exc
        members, nonmembers = balanced_eval_sets(bundle.d_train, bundle.d_test, m.eval_size, self.seed("eval"))
        return Prepared(source, bundle, members, nonmembers, pretrain)

    @cached_property
    def truth(self) -> GroundTruth:
        return self.prepared.truth()

    @cached_property
    def feature_scale(self) -> float:
        return float(self.prepared.bundle.d_aux_train.features.std(axis=0).mean())

    # -- models ------------------------------------------------------------
    def _fit(self, ds: LabeledDataset, role: str) -> TrainedModel:
        m = self.m
        if self.pretrained is not None:
            return finetune(self.pretrained, ds, m.train_config(self.seed(role, "train")), tag=role)
        return train(ds, m.model_config(self.seed(role, "init")), m.train_config(self.seed(role, "train")), tag=role)

    @cached_property
    def pretrained(self) -> TrainedModel | None:
        pt = self.m.post_training
        if pt is None or pt.kind != "finetune":
            return None
        tcfg = dataclasses.replace(self.m.train_config(self.seed("pretrain", "train")), epochs=pt.pretrain_epochs, checkpoint_every=0)
        return train(self.prepared.pretrain, self.m.model_config(self.seed("pretrain", "init")), tcfg, tag="pretrained")

    @cached_property
    def target(self) -> TrainedModel:
        prepared = self.prepared
        self._mark("train_target")
        if self._target is not None:
            return self._target
        try:
            return self._fit(prepared.bundle.d_train, "target-train")
        except Exception as exc:
            raise StageError("train_target", exc) from exc

    @cached_property
    def splits(self):
        return shadow_subsample(self.prepared.bundle, self.m.shadow_rate, self.m.n_shadows, self.seed("shadow-subsample"))

    @cached_property
    def ensemble(self) -> ShadowEnsemble | None:
        self.target
        if not self.needs_shadows:
            return None
        self._mark("train_shadows")
        splits = self.splits.shadow_splits
        try:
            models = self._shadow_models
            if models is None:
                models = self._map(lambda i: self._fit(splits[i][0], f"shadow-{i}"), range(len(splits)))
        except Exception as exc:
            raise StageError("train_shadows", exc) from exc
        ens = ShadowEnsemble(models, splits)
        b = self.prepared.bundle
        ens.warm(LabeledDataset.concat([b.d_aux_train, b.d_aux_test, self.prepared.eval_set]))
        return ens

    @cached_property
    def eval_predictions(self) -> PredictionSet:
        return predict(self.target, self.prepared.eval_set)

    def context(self, attack: str, model: TrainedModel, targets: PredictionSet) -> AttackContext:
        b = self.prepared.bundle
        return AttackContext(
            model=model, targets=targets, ensemble=self.ensemble, reference_data=b.d_aux_test,
            population=b.d_aux_test, params=self.m.attack_params, seed=self.seed("attack", attack),
            feature_scale=self.feature_scale,
        )

    # -- per-attack cells -------------------------------------------------
    def scores(self) -> dict:
        """attack -> AttackScoreSet or error record."""
        self.ensemble
        self.feature_scale
        self._mark("score")
        todo = [a for a in self.m.attacks if a not in self._scores]

        def one(name):
            try:
                return get_attack(name).score(self.context(name, self.target, self.eval_predictions))
            except Exception as exc:  # recorded per cell
                log.warning("%s: scoring %s failed: %s", self.m.name, name, exc)
                return _error_record("score", exc)

        for name, res in zip(todo, self._map(one, todo)):
            self._scores[name] = res
        return {a: self._scores[a] for a in self.m.attacks}

    def _calibrate_one(self, name: str, mode: str):
        s = self._scores[name]
        if not isinstance(s, AttackScoreSet):
            return s
        try:
            if s.decision_only:
                return passthrough(name, mode)
            if mode == "audit":
                return oracle_calibrate(s, self.truth)
            b = self.prepared.bundle
            return shadow_calibrate(
                name, self.ensemble, reference_data=b.d_aux_test, population=b.d_aux_test,
                params=self.m.attack_params, seed=self.seed("attack", name), feature_scale=self.feature_scale,
            )
        except Exception as exc:
            log.warning("%s: calibrating %s/%s failed: %s", self.m.name, name, mode, exc)
            return _error_record("calibrate", exc)

    def calibrations(self) -> dict:
        """(attack, mode) -> CalibrationResult or error record; attack mode runs first under a read counter."""
        self.scores()
        self._mark("calibrate")
        truth = self.truth
        for mode in ("attack", "audit"):
            if mode not in self.m.modes:
                continue
            todo = [a for a in self.m.attacks if (a, mode) not in self._cals]
            before = truth.reads
            results = self._map(lambda a: self._calibrate_one(a, mode), todo)
            if mode == "attack":
                self.isolation_reads = truth.reads - before
                if self.isolation_reads:
                    raise AssertionError("attack-mode calibration read evaluation membership")
            for a, r in zip(todo, results):
                self._cals[(a, mode)] = r
        return dict(self._cals)

    def bundle(self) -> ReportBundle:
        cals = self.calibrations()
        self._mark("decide")
        decisions = {}
        for key, cal in sorted(cals.items()):
            s = self._scores[key[0]]
            if isinstance(cal, dict):
                continue
            try:
                decisions[key] = decide(s, cal)
            except Exception as exc:
                cals[key] = _error_record("decide", exc)
        self._mark("metrics")
        cells = {}
        for attack in self.m.attacks:
            for mode in self.m.modes:
                cal = cals[(attack, mode)]
                if isinstance(cal, dict):
                    cells[(attack, mode)] = cal
                    continue
                try:
                    cells[(attack, mode)] = evaluate(self._scores[attack], cal, self.truth,
                                                     alphas=self.m.alphas, betas=self.m.betas)
                except Exception as exc:
                    cells[(attack, mode)] = _error_record("metrics", exc)
        return ReportBundle(self.m.name, cells, self.model_summary(), self.provenance(), list(self.trace))

    def model_summary(self) -> dict:
        b = self.prepared.bundle
        out = {"target": generalization_gap(self.target, b.d_train, b.d_test)}
        if self.pretrained is not None:
            out["pretrained"] = generalization_gap(self.pretrained, self.prepared.pretrain, b.d_test)
        return out

    def provenance(self) -> dict:
        return {
            "manifest_hash": self.m.hash(), "seed": self.m.seed, "toolkit_version": __version__,
            "seeds": {"data": self.seed("data"), "split": self.seed("split"), "target": self.seed("target-train", "train")},
            "eval_size": len(self.prepared.eval_members),
            "attack_mode_truth_reads": self.isolation_reads,
        }


def run_experiment(manifest: ExperimentManifest, *, workers: int | None = None) -> ReportBundle:
    """Algorithm order: generate, split, mislabel, train target, train shadows, score, calibrate, decide, metrics."""
    if manifest.post_training is not None and manifest.post_training.kind == "unlearning":
        return run_unlearning_audit(manifest, workers=workers)
    return Session(manifest, workers=workers).bundle()


def _sweep_manifest(base: ExperimentManifest, axis: str, value) -> ExperimentManifest:
    name = f"{base.name}-{axis}={value}"
    if axis == "mislabel_portion":
        return base.replace(name=name, mislabel_portion=float(value))
    if axis == "capacity_preset":
        return base.replace(name=name, model_preset=str(value), hidden_widths=None)
    if axis == "dp_noise":
        # noise 0 on this axis is the non-private baseline
        clip = base.dp.clip_norm if base.dp is not None else 1.0
        return base.replace(name=name, dp=DPConfig(clip, float(value)) if float(value) > 0 else None)
    if axis == "epochs":
        return base.replace(name=name, training=dataclasses.replace(base.training, epochs=int(value)))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def run_sweep(base: ExperimentManifest, axis: str, values, *, workers: int | None = None,
              include_quantile: bool = False) -> list[ReportBundle]:
    """One bundle per value; the epochs axis reads checkpoints of a single longest run."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    if axis in ("epochs", "mislabel_portion") and not include_quantile and "quantile" in base.attacks:
        kept = tuple(a for a in base.attacks if a != "quantile")
        if not kept:
            raise ConfigurationError("sweep excludes quantile by default and no other attack is listed")
        base = base.replace(attacks=kept)
    if base.post_training is not None and base.post_training.kind == "unlearning":
        raise ConfigurationError("sweeps do not support unlearning manifests; use unlearn-audit")
    if axis != "epochs":
        return [run_experiment(_sweep_manifest(base, axis, v), workers=workers) for v in values]

    epochs = [int(v) for v in values]
    if any(e < 1 for e in epochs):
        raise ConfigurationError("epoch values must be positive")
    every = reduce(math.gcd, epochs)
    longest = base.replace(training=dataclasses.replace(base.training, epochs=max(epochs), checkpoint_every=every))
    full = Session(longest, workers=workers)
    target = full.target
    shadows = full.ensemble.models if full.ensemble is not None else None
    out = []
    for e in epochs:
        m_e = _sweep_manifest(base, "epochs", e)
        sess = Session(
            m_e, workers=workers, target=target.at_checkpoint(e),
            shadow_models=None if shadows is None else [s.at_checkpoint(e) for s in shadows],
        )
        out.append(sess.bundle())
    return out


# -- unlearning -----------------------------------------------------------

def _split_eval(members: LabeledDataset, nonmembers: LabeledDataset):
    ds = LabeledDataset.concat([members, nonmembers])
    truth = GroundTruth.from_arrays(
        np.concatenate([members.sample_ids, nonmembers.sample_ids]),
        np.concatenate([np.ones(len(members), bool), np.zeros(len(nonmembers), bool)]),
    )
    return ds, truth


def _gran(name: str) -> str:
    g = get_attack(name).granularity
    return "global" if g == "adaptive" else g


def run_unlearning_audit(manifest: ExperimentManifest, *, workers: int | None = None) -> ReportBundle:
    """Fixed-data audit (forget set across pretrained vs retrained) and fixed-model OptIndis per method."""
    pt = manifest.post_training
    if pt is None or pt.kind != "unlearning":
        raise ConfigurationError("unlearn-audit needs a [post_training] block with kind = unlearning")
    sess = Session(manifest, workers=workers)
    m = sess.m
    b = sess.prepared.bundle
    original = sess.target
    sess.ensemble
    value = pt.forget_class if pt.forget_mode == "single_category" else pt.forget_fraction
    d_forget, d_retain = forget_split(b.d_train, pt.forget_mode, value, sess.seed("forget"))
    sess._mark("unlearn")
    try:
        retrained = retrain_reference(d_retain, m.model_config(sess.seed("retrain", "init")),
                                      m.train_config(sess.seed("retrain", "train")), tag="retrained")
    except Exception as exc:
        raise StageError("unlearn", exc) from exc
    ucfg = dataclasses.replace(m.train_config(0), epochs=pt.unlearn_epochs, learning_rate=pt.unlearn_lr, checkpoint_every=0)
    unlearned = {}
    for method in pt.methods:
        if method == "exact_retrain":
            unlearned[method] = retrained
        elif method == "none":
            unlearned[method] = original
        else:
            try:
                unlearned[method] = unlearn_approx(original, d_forget, d_retain, method,
                                                   dataclasses.replace(ucfg, seed=sess.seed("unlearn", method)))
            except Exception as exc:
                raise StageError("unlearn", exc) from exc

    single = pt.forget_mode == "single_category"
    attacks = list(m.attacks)

    # fixed-model evaluation: retain members vs forget non-members; calibration: retain vs test on the retrained model
    gen = _rng.stream(sess.seed("unlearn-eval"))
    cap = m.eval_size or len(d_forget)
    n_eval = min(cap, len(d_forget), len(d_retain) // 2)
    perm = gen.permutation(len(d_retain))
    eval_members = d_retain.take(perm[:n_eval])
    eval_forget = d_forget.take(gen.choice(len(d_forget), n_eval, replace=False))
    n_cal = min(m.eval_size or len(b.d_test), len(d_retain) - n_eval, len(b.d_test))
    cal_members = d_retain.take(perm[n_eval:n_eval + n_cal])
    cal_nonmembers = b.d_test.take(gen.choice(len(b.d_test), n_cal, replace=False))
    eval_ds, eval_truth = _split_eval(eval_members, eval_forget)
    cal_ds, cal_truth = _split_eval(cal_members, cal_nonmembers)
    sess._mark("score")

    def score(name, model, ds=None, targets=None):
        targets = targets if targets is not None else predict(model, ds)
        return get_attack(name).score(sess.context(name, model, targets))

    def one(name):
        spec = get_attack(name)
        if single and spec.per_class:
            rec = {"inapplicable": "per-class calibration is invalid for class unlearning"}
            return name, rec, rec
        try:
            fixed_data = _fixed_data(name, spec, score, original, retrained, unlearned, d_forget)
        except Exception as exc:
            fixed_data = {"error": _error_record("fixed_data", exc)}
        try:
            fixed_model = _fixed_model(name, spec, score, retrained, unlearned, eval_ds, eval_truth, cal_ds, cal_truth, m)
        except Exception as exc:
            fixed_model = {"error": _error_record("fixed_model", exc)}
        return name, fixed_data, fixed_model

    results = sess._map(one, attacks)
    sess._mark("metrics")
    summary = {"original": generalization_gap(original, b.d_train, b.d_test)}
    for tag, model in [("retrained", retrained)] + sorted(unlearned.items()):
        summary[tag] = {
            "forget_acc": _accuracy(model, d_forget), "retain_acc": _accuracy(model, d_retain),
            "test_acc": _accuracy(model, b.d_test),
        }
    sections = {
        "forget": {"mode": pt.forget_mode, "size": len(d_forget), "retain_size": len(d_retain),
                   "eval_size": n_eval, "calibration_size": n_cal},
        "fixed_data": {n: fd for n, fd, _ in results},
        "fixed_model": {n: fm for n, _, fm in results},
    }
    return ReportBundle(m.name, {}, summary, sess.provenance(), list(sess.trace), sections)


def _accuracy(model, ds) -> float:
    p = predict(model, ds, keep_features=False)
    return float((p.posteriors.argmax(axis=1) == ds.labels).mean())


def _fixed_data(name, spec, score, original, retrained, unlearned, d_forget) -> dict:
    """Forget set is a member of the pretrained model and a non-member of the retrained one."""
    if spec.granularity == "decision":
        pre_t, ret_t = predict(original, d_forget), predict(retrained, d_forget)
        pooled = score(name, retrained, targets=PredictionSet.concat([pre_t, ret_t]))
        n = len(d_forget)
        pre = dataclasses.replace(pooled, sample_ids=pooled.sample_ids[:n], scores=pooled.scores[:n], labels=pooled.labels[:n])
        ret = dataclasses.replace(pooled, sample_ids=pooled.sample_ids[n:], scores=pooled.scores[n:], labels=pooled.labels[n:])
        out = fixed_data_audit(pre, ret, passthrough(name, "audit"))
        out["nonmember_rate"] = {"pretrained": 1.0 - out["tpr"], "retrained": out["tnr"]}
        return out
    pre = score(name, original, d_forget)
    ret = score(name, retrained, d_forget)
    members = np.concatenate([np.ones(len(pre), bool), np.zeros(len(ret), bool)])
    cal = threshold_calibrate_arrays(
        name, np.concatenate([pre.scores, ret.scores]), members, np.concatenate([pre.labels, ret.labels]),
        _gran(name), provenance="oracle on pooled forget-set scores", model_tag="pooled",
    )
    out = fixed_data_audit(pre, ret, cal)
    rates = {"pretrained": 1.0 - out["tpr"], "retrained": out["tnr"]}
    for method, model in sorted(unlearned.items()):
        rates[method] = float(1.0 - decide(score(name, model, d_forget), cal).mean())
    out["nonmember_rate"] = rates
    return out


def _fixed_model(name, spec, score, retrained, unlearned, eval_ds, eval_truth, cal_ds, cal_truth, m) -> dict:
    if spec.granularity == "decision":
        cal = passthrough(name, "audit")
    else:
        cal = oracle_calibrate(score(name, retrained, cal_ds), cal_truth, _gran(name), model_tag="retrained")
    ref = evaluate(score(name, retrained, eval_ds), cal, eval_truth, alphas=m.alphas, betas=m.betas)
    methods = {}
    for method, model in sorted(unlearned.items()):
        rep = evaluate(score(name, model, eval_ds), cal, eval_truth, alphas=m.alphas, betas=m.betas)
        methods[method] = {"balanced_accuracy": rep.balanced_accuracy, "opt_indis": opt_indis(rep, ref)}
    return {"retrained_balanced_accuracy": ref.balanced_accuracy, "methods": methods}


POSTERIOR_ONLY_ATTACKS = ("metric-entropy", "metric-mentropy", "metric-confidence", "mlleaks3")


def audit_predictions(records, *, attacks=POSTERIOR_ONLY_ATTACKS, name: str = "imported",
                      alphas=(0.001, 0.01), betas=(0.001, 0.01)) -> ReportBundle:
    """Audit-mode report for externally produced predictions that carry membership labels."""
    preds = PredictionSet.from_records(records)
    if preds.membership is None:
        raise ConfigurationError("auditing imported predictions needs member = true/false on every record")
    truth = GroundTruth.from_arrays(preds.sample_ids, preds.membership)
    cells = {}
    for a in attacks:
        spec = get_attack(a)
        if spec.needs_ensemble or a not in POSTERIOR_ONLY_ATTACKS:
            raise ConfigurationError(f"{a} needs the model or shadow models; imported predictions support {POSTERIOR_ONLY_ATTACKS}")
        try:
            scores = AttackScoreSet(a, preds.sample_ids, spec.scorer(AttackContext(None, preds)), labels=preds.labels)
            cells[(a, "audit")] = evaluate(scores, oracle_calibrate(scores, truth), truth, alphas=alphas, betas=betas)
        except Exception as exc:
            cells[(a, "audit")] = _error_record("score", exc)
    prov = {"source": "imported predictions", "model_tag": preds.model_tag, "records": len(preds), "toolkit_version": __version__}
    return ReportBundle(name, cells, {}, prov, ["score", "calibrate", "decide", "metrics"])
