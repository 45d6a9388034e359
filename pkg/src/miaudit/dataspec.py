"""Synthetic data, label noise, and the disjoint split / shadow-subsample protocol."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from miaudit import rng as _rng
from miaudit.errors import ConfigurationError, DataValidationError, ProtocolError

SPLIT_NAMES = ("target_train", "target_test", "aux_train", "aux_test")


@dataclasses.dataclass(frozen=True)
class DataSpec:
    num_classes: int = 4
    dim: int = 8
    per_class_count: int = 100
    class_separation: float = 3.0
    covariance_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if int(self.num_classes) < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if int(self.dim) < 1:
            raise ConfigurationError("dim must be >= 1")
        if int(self.per_class_count) < 2:
            raise ConfigurationError("per_class_count must be >= 2")
        # separation 0 is allowed: it is the null (indistinguishable classes) case
        if not self.class_separation >= 0 or not math.isfinite(self.class_separation):
            raise ConfigurationError("class_separation must be a finite non-negative real")
        if not self.covariance_scale > 0 or not math.isfinite(self.covariance_scale):
            raise ConfigurationError("covariance_scale must be a positive real")


@dataclasses.dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Rows are kept in ascending ``sample_ids`` order."""

    sample_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.sample_ids, dtype=np.int64)
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or len(ids) != len(x) or len(y) != len(x):
            raise DataValidationError("sample_ids, features and labels must have matching lengths")
        if len(np.unique(ids)) != len(ids):
            raise DataValidationError("sample_ids must be unique")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataValidationError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.sample_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.sample_ids, other.sample_ids)
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def id_set(self) -> set:
        return set(self.sample_ids.tolist())

    def take(self, positions) -> "LabeledDataset":
        pos = np.sort(np.asarray(positions, dtype=np.int64))
        return LabeledDataset(self.sample_ids[pos], self.features[pos], self.labels[pos], self.num_classes)

    def select(self, ids: Iterable[int]) -> "LabeledDataset":
        """Subset by sample id; unknown ids raise."""
        ids = np.asarray(sorted(set(int(i) for i in ids)), dtype=np.int64)
        pos = np.searchsorted(self.sample_ids, ids)
        if len(ids) and (pos.max(initial=0) >= len(self) or not np.array_equal(self.sample_ids[np.minimum(pos, len(self) - 1)], ids)):
            raise DataValidationError("requested sample ids not present in dataset")
        return self.take(pos)

    def exclude(self, ids: Iterable[int]) -> "LabeledDataset":
        drop = np.isin(self.sample_ids, np.fromiter(ids, dtype=np.int64))
        return self.take(np.flatnonzero(~drop))

    def with_labels(self, labels, num_classes: int | None = None) -> "LabeledDataset":
        return LabeledDataset(self.sample_ids, self.features, labels, num_classes or self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @staticmethod
    def concat(parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        ids = np.concatenate([p.sample_ids for p in parts])
        order = np.argsort(ids, kind="stable")
        return LabeledDataset(
            ids[order],
            np.concatenate([p.features for p in parts])[order],
            np.concatenate([p.labels for p in parts])[order],
            max(p.num_classes for p in parts),
        )


@dataclasses.dataclass(eq=False)
class SplitBundle:
    d_train: LabeledDataset
    d_test: LabeledDataset
    d_aux_train: LabeledDataset
    d_aux_test: LabeledDataset
    shadow_splits: list = dataclasses.field(default_factory=list)
    d_forget: LabeledDataset | None = None
    d_retain: LabeledDataset | None = None

    def principal(self) -> dict:
        return {
            "target_train": self.d_train,
            "target_test": self.d_test,
            "aux_train": self.d_aux_train,
            "aux_test": self.d_aux_test,
        }


def generate_synthetic(spec: DataSpec) -> LabeledDataset:
    """Isotropic Gaussian classes; class ``c`` is centred at ``sep * e_{c mod dim}``."""
    spec.validate()
    k, d, m = int(spec.num_classes), int(spec.dim), int(spec.per_class_count)
    gen = _rng.stream(spec.seed, "data", "generate")
    means = np.zeros((k, d))
    means[np.arange(k), np.arange(k) % d] = spec.class_separation
    labels = np.repeat(np.arange(k), m)
    noise = gen.standard_normal((k * m, d)) * math.sqrt(spec.covariance_scale)
    return LabeledDataset(np.arange(k * m), means[labels] + noise, labels, k)


def coarsen_labels(ds: LabeledDataset, group: int) -> LabeledDataset:
    """Merge consecutive classes in groups of ``group`` (superclass analog)."""
    if group < 1:
        raise ConfigurationError("superclass group must be >= 1")
    if group == 1:
        return ds
    k = -(-ds.num_classes // group)
    if k < 2:
        raise ConfigurationError("superclass grouping leaves fewer than 2 classes")
    return ds.with_labels(ds.labels // group, k)


def inject_mislabels(ds: LabeledDataset, portion: float, seed: int) -> LabeledDataset:
    """Symmetric label noise on exactly ``floor(portion * n)`` samples."""
    if not 0.0 <= portion <= 1.0:
        raise ConfigurationError("mislabel portion must lie in [0, 1]")
    if ds.num_classes < 2:
        raise ConfigurationError("label noise needs at least 2 classes")
    n_flip = int(math.floor(portion * len(ds)))
    if n_flip == 0:
        return ds
    gen = _rng.stream(seed, "mislabel")
    pos = gen.choice(len(ds), size=n_flip, replace=False)
    shift = gen.integers(1, ds.num_classes, size=n_flip)
    labels = ds.labels.copy()
    labels[pos] = (labels[pos] + shift) % ds.num_classes
    return ds.with_labels(labels)


def _stratified_quota(class_counts: np.ndarray, remaining: np.ndarray, total: int) -> np.ndarray:
    n = class_counts.sum()
    ideal = class_counts * total / n
    quota = np.floor(ideal).astype(np.int64)
    quota = np.minimum(quota, remaining)
    deficit = total - quota.sum()
    frac = ideal - quota
    # largest remainder first; ties go to the class with more room left
    order = sorted(range(len(class_counts)), key=lambda c: (-frac[c], -(remaining[c] - quota[c]), c))
    for cap in (np.floor(ideal) + 1, np.full(len(ideal), np.inf)):
        for c in order:
            if deficit == 0:
                return quota
            room = min(remaining[c], cap[c]) - quota[c]
            if room >= 1:
                quota[c] += 1
                deficit -= 1
    if deficit:
        raise ProtocolError("cannot allocate a stratified split of the requested size")
    return quota


def split_protocol(ds: LabeledDataset, fractions: dict, seed: int) -> SplitBundle:
    """Class-stratified disjoint target/auxiliary splits."""
    missing = [k for k in SPLIT_NAMES if k not in fractions]
    if missing:
        raise ConfigurationError(f"missing split fractions: {missing}")
    fr = [float(fractions[k]) for k in SPLIT_NAMES]
    if any(not f > 0 for f in fr):
        raise ConfigurationError("split fractions must be positive")
    if sum(fr) > 1.0 + 1e-12:
        raise ConfigurationError(f"split fractions sum to {sum(fr)} > 1")
    n = len(ds)
    gen = _rng.stream(seed, "split")
    per_class = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    per_class = [gen.permutation(p) for p in per_class]
    counts = np.array([len(p) for p in per_class], dtype=np.int64)
    used = np.zeros_like(counts)
    parts = []
    for f in fr:
        size = int(math.floor(f * n))
        quota = _stratified_quota(counts, counts - used, size)
        pos = np.concatenate([per_class[c][used[c]:used[c] + quota[c]] for c in range(ds.num_classes)])
        used += quota
        parts.append(ds.take(pos))
    return SplitBundle(*parts)


def shadow_subsample(bundle: SplitBundle, r: float = 0.8, n_shadows: int = 5, seed: int = 0) -> SplitBundle:
    """Draw ``n_shadows`` member/non-member subsamples of the auxiliary splits at rate ``r``."""
    if not 0.0 < r <= 1.0:
        raise ConfigurationError("sampling rate r must lie in (0, 1]")
    if int(n_shadows) < 1:
        raise ConfigurationError("number of shadow models must be >= 1")
    if len(bundle.d_aux_train) == 0 or len(bundle.d_aux_test) == 0:
        raise ProtocolError("auxiliary split is empty")
    a_tr, a_te = bundle.d_aux_train, bundle.d_aux_test
    m_tr, m_te = int(math.floor(r * len(a_tr))), int(math.floor(r * len(a_te)))
    if m_tr == 0 or m_te == 0:
        raise ProtocolError("sampling rate leaves an empty shadow subsample")
    splits = []
    for i in range(int(n_shadows)):
        gen = _rng.stream(seed, "shadow-subsample", i)
        sm = a_tr.take(gen.choice(len(a_tr), m_tr, replace=False))
        sn = a_te.take(gen.choice(len(a_te), m_te, replace=False))
        splits.append((sm, sn))
    if len(splits) > 1 and m_tr < len(a_tr) and all(s[0] == splits[0][0] for s in splits):
        attempt = 0
        while splits[-1][0] == splits[0][0]:
            gen = _rng.stream(seed, "shadow-subsample", n_shadows - 1, "redraw", attempt)
            splits[-1] = (a_tr.take(gen.choice(len(a_tr), m_tr, replace=False)), splits[-1][1])
            attempt += 1
    return dataclasses.replace(bundle, shadow_splits=splits)


def forget_split(d_train: LabeledDataset, mode: str, value, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Partition ``d_train`` into ``(d_forget, d_retain)``."""
    if mode == "single_category":
        cls = int(value)
        mask = d_train.labels == cls
        if not mask.any():
            raise ConfigurationError(f"class {cls} not present in training data")
        forget_pos = np.flatnonzero(mask)
    elif mode == "random_fraction":
        frac = float(value)
        if not 0.0 < frac < 1.0:
            raise ConfigurationError("forget fraction must lie in (0, 1)")
        gen = _rng.stream(seed, "forget")
        chosen = []
        for c in range(d_train.num_classes):
            pos = np.flatnonzero(d_train.labels == c)
            k = int(math.floor(frac * len(pos) + 0.5))
            chosen.append(gen.choice(pos, size=k, replace=False) if k else np.empty(0, np.int64))
        forget_pos = np.concatenate(chosen)
    else:
        raise ConfigurationError(f"unknown forget mode {mode!r}")
    keep = np.setdiff1d(np.arange(len(d_train)), forget_pos)
    return d_train.take(forget_pos), d_train.take(keep)


def balanced_eval_sets(members: LabeledDataset, nonmembers: LabeledDataset, size: int | None, seed: int):
    """Equal-sized member / non-member evaluation subsamples."""
    cap = min(len(members), len(nonmembers))
    size = cap if size is None else int(size)
    if size < 1:
        raise ConfigurationError("evaluation size must be >= 1")
    size = min(size, cap)
    gen = _rng.stream(seed, "eval-subsample")
    m = members.take(gen.choice(len(members), size, replace=False))
    nm = nonmembers.take(gen.choice(len(nonmembers), size, replace=False))
    return m, nm


def write_jsonl(ds: LabeledDataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sid, y, x in zip(ds.sample_ids.tolist(), ds.labels.tolist(), ds.features):
            feats = ", ".join(format(v, ".17g") for v in x.tolist())
            fh.write(f'{{"sample_id": {sid}, "label": {y}, "features": [{feats}]}}\n')


def read_jsonl(path, num_classes: int | None = None) -> LabeledDataset:
    ids, labels, feats = [], [], []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ids.append(int(obj["sample_id"]))
                labels.append(int(obj["label"]))
                feats.append([float(v) for v in obj["features"]])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataValidationError(f"{path}:{lineno}: malformed dataset line ({exc})") from exc
    if len({len(f) for f in feats}) > 1:
        raise DataValidationError(f"{path}: inconsistent feature dimensionality")
    k = num_classes if num_classes is not None else (max(labels) + 1 if labels else 2)
    order = np.argsort(ids, kind="stable")
    return LabeledDataset(np.array(ids)[order], np.array(feats, dtype=np.float64).reshape(len(ids), -1)[order], np.array(labels)[order], k)
