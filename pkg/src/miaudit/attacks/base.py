"""Score containers, the shadow ensemble, and the per-call attack context."""
from __future__ import annotations

import dataclasses
import threading
from pathlib import Path

import numpy as np

from miaudit.dataspec import LabeledDataset
from miaudit.errors import DataValidationError, InsufficientKnowledgeError
from miaudit.models import PredictionSet, TrainedModel, predict


@dataclasses.dataclass(eq=False)
class AttackScoreSet:
    """Per-sample membership scores; higher means more member-like."""

    attack_id: str
    sample_ids: np.ndarray
    scores: np.ndarray
    decision_only: bool = False
    knowledge_tag: str = ""
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.sample_ids.shape:
            raise DataValidationError("one score per sample required")
        if not np.isfinite(self.scores).all():
            raise DataValidationError(f"{self.attack_id}: non-finite scores")
        if self.decision_only and not np.isin(self.scores, (0.0, 1.0)).all():
            raise DataValidationError(f"{self.attack_id}: decision-only scores must be 0/1")

    def __len__(self):
        return len(self.scores)

    def map(self, fn) -> "AttackScoreSet":
        return dataclasses.replace(self, scores=fn(self.scores))

    def to_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for sid, s in zip(self.sample_ids.tolist(), self.scores.tolist()):
                fh.write(f'{{"sample_id": {sid}, "score": {format(s, ".17g")}}}\n')


class ShadowEnsemble:
    """Shadow models with their member / non-member splits and a prediction cache."""

    def __init__(self, models: list[TrainedModel], splits: list[tuple[LabeledDataset, LabeledDataset]]):
        if len(models) != len(splits):
            raise DataValidationError("one (member, non-member) split per shadow model required")
        self.models = list(models)
        self.splits = list(splits)
        self.member_ids = [frozenset(sm.sample_ids.tolist()) for sm, _ in splits]
        self._cache: dict[int, dict[int, np.ndarray]] = {i: {} for i in range(len(models))}
        self._memo: dict = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.models)

    def without(self, i: int) -> "ShadowEnsemble":
        keep = [j for j in range(len(self)) if j != i]
        sub = ShadowEnsemble([self.models[j] for j in keep], [self.splits[j] for j in keep])
        sub._cache = {k: self._cache[j] for k, j in enumerate(keep)}
        return sub

    def warm(self, ds: LabeledDataset) -> None:
        """Cache posteriors of every model on ``ds`` (the single build phase)."""
        for i, m in enumerate(self.models):
            post = predict(m, ds, keep_features=False).posteriors
            cache = self._cache[i]
            for sid, row in zip(ds.sample_ids.tolist(), post):
                cache[sid] = row

    def posteriors(self, i: int, sample_ids, features) -> np.ndarray:
        cache = self._cache[i]
        ids = np.asarray(sample_ids).tolist()
        if all(s in cache for s in ids):
            return np.array([cache[s] for s in ids]).reshape(len(ids), -1)
        m = self.models[i]
        dummy = LabeledDataset(np.arange(len(ids)), features, np.zeros(len(ids), dtype=np.int64), m.config.num_classes)
        return predict(m, dummy, keep_features=False).posteriors

    def cached(self, i: int, sample_id: int) -> np.ndarray:
        """Posterior of shadow ``i`` on a sample seen by :meth:`warm`."""
        try:
            return self._cache[i][int(sample_id)]
        except KeyError:
            raise InsufficientKnowledgeError(f"shadow {i} has no cached prediction for sample {sample_id}") from None

    def is_member(self, sample_ids) -> np.ndarray:
        """Boolean ``(n, N)`` matrix: sample trained into shadow ``j``."""
        ids = np.asarray(sample_ids).tolist()
        return np.array([[s in mem for mem in self.member_ids] for s in ids], dtype=bool).reshape(len(ids), len(self))

    def memo(self, key, factory):
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        value = factory()
        with self._lock:
            return self._memo.setdefault(key, value)


@dataclasses.dataclass(frozen=True)
class AttackParams:
    rmia_gamma: float = 1.0
    quantile_alpha: float = 0.99
    quantile_signal: str = "confidence"
    quantile_hidden: int = 32
    merlin_sigma: float | None = None
    merlin_sigma_scale: float = 0.01
    merlin_trials: int = 100
    blindmi_k: int = 5
    blindmi_pass_cap: int = 20
    topk: int = 3
    classifier_epochs: int = 60


@dataclasses.dataclass
class AttackContext:
    """Everything one attack invocation may look at.

    ``targets`` are the model's predictions on the records being judged and
    carry features; ``reference_data`` holds known non-members available to the
    attacker; ``population`` is the RMIA comparison population.
    """

    model: TrainedModel
    targets: PredictionSet
    ensemble: ShadowEnsemble | None = None
    reference_data: LabeledDataset | None = None
    population: LabeledDataset | None = None
    params: AttackParams = dataclasses.field(default_factory=AttackParams)
    seed: int = 0
    feature_scale: float = 1.0
    knowledge_tag: str = "target"
    _ref_preds: PredictionSet | None = dataclasses.field(default=None, repr=False)

    @property
    def reference(self) -> PredictionSet:
        if self._ref_preds is None:
            if self.reference_data is None or len(self.reference_data) == 0:
                raise InsufficientKnowledgeError("attack needs reference non-member data")
            self._ref_preds = predict(self.model, self.reference_data)
        return self._ref_preds

