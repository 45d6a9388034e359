import dataclasses

import numpy as np
import pytest

from miaudit.dataspec import DataSpec, LabeledDataset, generate_synthetic
from miaudit.models import TrainConfig
from miaudit.pipeline import ExperimentManifest

_CRITERIA = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    """Remember one acceptance verdict for the end-of-run summary."""
    _CRITERIA[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[n]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {n:2d}. {title}" + (f" ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def smoke_manifest():
    """The smoke dataset: 4 classes, 100 per class, medium MLP, 20 epochs."""
    return ExperimentManifest(
        name="smoke", seed=3, data=DataSpec(per_class_count=100),
        training=TrainConfig(epochs=20, learning_rate=0.05),
    ).validate()


@pytest.fixture(scope="session")
def tiny_manifest(smoke_manifest):
    return smoke_manifest.replace(
        name="tiny", data=dataclasses.replace(smoke_manifest.data, per_class_count=40),
        attacks=("metric-confidence",), modes=("audit",),
        training=dataclasses.replace(smoke_manifest.training, epochs=5),
    )


@pytest.fixture
def blobs():
    return generate_synthetic(DataSpec(num_classes=3, dim=4, per_class_count=30, class_separation=3.0, seed=5))


def make_dataset(features, labels, num_classes=None, ids=None):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    ids = np.arange(len(labels)) if ids is None else ids
    return LabeledDataset(ids, features, labels, num_classes or int(labels.max()) + 1)
