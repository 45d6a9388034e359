import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from miaudit.dataspec import (
    SPLIT_NAMES,
    DataSpec,
    balanced_eval_sets,
    coarsen_labels,
    forget_split,
    generate_synthetic,
    inject_mislabels,
    read_jsonl,
    shadow_subsample,
    split_protocol,
    write_jsonl,
)
from miaudit.errors import ConfigurationError, ProtocolError

QUARTERS = dict.fromkeys(SPLIT_NAMES, 0.25)


def perceptron_separates(x, y, iters=100):
    """Multiclass perceptron oracle: True once an epoch makes no mistakes."""
    k = int(y.max()) + 1
    w = np.zeros((k, x.shape[1] + 1))
    xb = np.hstack([x, np.ones((len(x), 1))])
    for _ in range(iters):
        mistakes = 0
        for xi, yi in zip(xb, y):
            pred = int(np.argmax(w @ xi))
            if pred != yi:
                w[yi] += xi
                w[pred] -= xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


class TestGenerate:
    def test_far_apart_classes_are_linearly_separable(self):
        ds = generate_synthetic(DataSpec(num_classes=2, dim=2, per_class_count=10, class_separation=100,
                                         covariance_scale=0.01, seed=7))
        assert len(ds) == 20
        assert perceptron_separates(ds.features, ds.labels)

    def test_zero_separation_gives_identical_class_distributions(self):
        ds = generate_synthetic(DataSpec(num_classes=3, dim=2, per_class_count=3000, class_separation=0.0, seed=1))
        means = np.array([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
        # every class is N(0, I); sample means agree to Monte Carlo precision
        assert np.abs(means).max() < 4 / math.sqrt(3000)

    def test_same_seed_is_byte_identical(self):
        spec = DataSpec(seed=11)
        assert generate_synthetic(spec) == generate_synthetic(spec)
        assert not generate_synthetic(spec) == generate_synthetic(DataSpec(seed=12))

    @pytest.mark.parametrize("field,value", [
        ("num_classes", 1), ("dim", 0), ("per_class_count", 1), ("class_separation", -1.0),
        ("covariance_scale", 0.0),
    ])
    def test_invalid_field_is_named(self, field, value):
        with pytest.raises(ConfigurationError, match=field):
            generate_synthetic(DataSpec(**{field: value}))

    def test_coarsen_merges_consecutive_classes(self):
        ds = generate_synthetic(DataSpec(num_classes=4, per_class_count=5))
        merged = coarsen_labels(ds, 2)
        assert merged.num_classes == 2
        assert np.array_equal(merged.labels, ds.labels // 2)
        with pytest.raises(ConfigurationError):
            coarsen_labels(ds, 4)


class TestMislabels:
    def test_zero_portion_is_identity(self, blobs):
        assert inject_mislabels(blobs, 0.0, seed=1) == blobs

    def test_exact_count_and_every_change_is_real(self):
        ds = generate_synthetic(DataSpec(num_classes=4, per_class_count=25))
        noisy = inject_mislabels(ds, 0.1, seed=3)
        changed = noisy.labels != ds.labels
        assert changed.sum() == 10
        assert np.array_equal(noisy.sample_ids, ds.sample_ids)
        assert noisy.features.tobytes() == ds.features.tobytes()

    def test_two_classes_flip_to_the_other_label(self):
        ds = generate_synthetic(DataSpec(num_classes=2, per_class_count=20))
        noisy = inject_mislabels(ds, 0.5, seed=0)
        changed = noisy.labels != ds.labels
        assert changed.sum() == 20
        assert np.array_equal(noisy.labels[changed], 1 - ds.labels[changed])

    @pytest.mark.parametrize("portion", [-0.1, 1.5])
    def test_portion_out_of_range(self, blobs, portion):
        with pytest.raises(ConfigurationError):
            inject_mislabels(blobs, portion, seed=0)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 60), k=st.integers(2, 6), portion=st.floats(0, 1), seed=st.integers(0, 2**31))
    def test_count_property(self, n, k, portion, seed):
        ds = make_dataset(np.zeros((n, 1)), np.arange(n) % k, k)
        noisy = inject_mislabels(ds, portion, seed)
        assert (noisy.labels != ds.labels).sum() == math.floor(portion * n)


class TestSplits:
    def test_quarters_of_400(self):
        ds = generate_synthetic(DataSpec(num_classes=4, per_class_count=100))
        b = split_protocol(ds, QUARTERS, seed=0)
        parts = list(b.principal().values())
        assert [len(p) for p in parts] == [100] * 4
        for a, c in itertools.combinations(parts, 2):
            assert not (a.id_set() & c.id_set())
        for p in parts:
            assert list(p.class_counts()) == [25] * 4

    def test_two_class_stratification(self):
        ds = generate_synthetic(DataSpec(num_classes=2, per_class_count=51))
        b = split_protocol(ds, {"target_train": 0.3, "target_test": 0.3, "aux_train": 0.2, "aux_test": 0.1}, seed=4)
        for p in b.principal().values():
            counts = p.class_counts()
            assert abs(int(counts[0]) - int(counts[1])) <= 1

    def test_determinism(self, blobs):
        a = split_protocol(blobs, QUARTERS, seed=9)
        b = split_protocol(blobs, QUARTERS, seed=9)
        assert all(a.principal()[k] == b.principal()[k] for k in SPLIT_NAMES)

    def test_fractions_over_one(self, blobs):
        with pytest.raises(ConfigurationError):
            split_protocol(blobs, dict.fromkeys(SPLIT_NAMES, 0.3), seed=0)

    @settings(max_examples=25, deadline=None)
    @given(
        counts=st.lists(st.integers(3, 40), min_size=2, max_size=5),
        fr=st.lists(st.floats(0.05, 0.25), min_size=4, max_size=4),
        seed=st.integers(0, 1000),
    )
    def test_sizes_disjointness_and_stratification(self, counts, fr, seed):
        labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
        ds = make_dataset(np.zeros((len(labels), 1)), labels, len(counts))
        b = split_protocol(ds, dict(zip(SPLIT_NAMES, fr)), seed)
        n = len(ds)
        src = ds.class_counts()
        seen = set()
        for f, p in zip(fr, b.principal().values()):
            assert len(p) == math.floor(f * n)
            assert not (p.id_set() & seen)
            seen |= p.id_set()
            ideal = src * len(p) / n
            assert np.all(np.abs(p.class_counts() - ideal) <= 1 + 1e-9)


class TestShadows:
    def test_rate_one_reproduces_aux(self, blobs):
        b = shadow_subsample(split_protocol(blobs, QUARTERS, 0), r=1.0, n_shadows=3, seed=0)
        for sm, sn in b.shadow_splits:
            assert sm == b.d_aux_train and sn == b.d_aux_test

    def test_rate_08_sizes_and_diversity(self):
        ds = generate_synthetic(DataSpec(num_classes=4, per_class_count=100))
        b = shadow_subsample(split_protocol(ds, QUARTERS, 0), r=0.8, seed=2)
        assert len(b.shadow_splits) == 5
        assert all(len(sm) == 80 and len(sn) == 80 for sm, sn in b.shadow_splits)
        assert len({tuple(sm.sample_ids) for sm, _ in b.shadow_splits}) > 1
        for sm, sn in b.shadow_splits:
            assert sm.id_set() <= b.d_aux_train.id_set()
            assert sn.id_set() <= b.d_aux_test.id_set()

    def test_two_samples_still_diverse(self):
        ds = make_dataset(np.zeros((8, 1)), np.arange(8) % 2)
        b = split_protocol(ds, QUARTERS, 0)
        b = shadow_subsample(b, r=0.5, n_shadows=2, seed=0)
        assert not b.shadow_splits[0][0] == b.shadow_splits[1][0]

    def test_bad_rate(self, blobs):
        with pytest.raises(ConfigurationError):
            shadow_subsample(split_protocol(blobs, QUARTERS, 0), r=0.0)

    def test_empty_aux_is_protocol_error(self, blobs):
        import dataclasses

        b = split_protocol(blobs, QUARTERS, 0)
        b = dataclasses.replace(b, d_aux_train=b.d_aux_train.take([]))
        with pytest.raises(ProtocolError):
            shadow_subsample(b)


class TestForget:
    def test_single_category(self):
        ds = generate_synthetic(DataSpec(num_classes=4, per_class_count=100))
        f, r = forget_split(ds, "single_category", 0, seed=0)
        assert len(f) == 100 and set(f.labels.tolist()) == {0}
        assert f.id_set() | r.id_set() == ds.id_set()
        assert not f.id_set() & r.id_set()

    def test_random_half_is_class_balanced(self):
        ds = generate_synthetic(DataSpec(num_classes=4, per_class_count=25))
        f, r = forget_split(ds, "random_fraction", 0.5, seed=1)
        counts = f.class_counts()
        assert counts.max() - counts.min() <= 1
        assert abs(len(f) - 50) <= 4
        assert LabeledDatasetUnion(f, r) == ds.id_set()

    def test_absent_class(self, blobs):
        with pytest.raises(ConfigurationError):
            forget_split(blobs, "single_category", 7, seed=0)

    def test_fraction_bounds(self, blobs):
        with pytest.raises(ConfigurationError):
            forget_split(blobs, "random_fraction", 1.0, seed=0)


def LabeledDatasetUnion(a, b):
    return a.id_set() | b.id_set()


def test_balanced_eval_sets_are_equal_sized(blobs):
    b = split_protocol(blobs, QUARTERS, 0)
    m, n = balanced_eval_sets(b.d_train, b.d_test, None, seed=0)
    assert len(m) == len(n) == min(len(b.d_train), len(b.d_test))
    m, n = balanced_eval_sets(b.d_train, b.d_test, 5, seed=0)
    assert len(m) == len(n) == 5


def test_jsonl_round_trip(tmp_path, blobs):
    path = tmp_path / "ds.jsonl"
    write_jsonl(blobs, path)
    assert read_jsonl(path, blobs.num_classes) == blobs
    first = path.read_text().splitlines()[0]
    assert first.startswith('{"sample_id": 0, "label": 0, "features": [')
