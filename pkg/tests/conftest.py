import numpy as np
import pytest

from bayesdt import Dataset, Hyperparams, bucketize


@pytest.fixture
def two_point():
    """One feature, two points: x=0 labeled 0, x=1 labeled 1.

    Small enough to work through by hand: the posterior supports exactly two
    trees (the lone leaf and the single split), with weights 1/6 and e^-2/4
    at unit alpha and ln_phi=2.
    """
    data = Dataset(
        features=np.array([[0.0], [1.0]]),
        labels=np.array([0, 1], dtype=np.int64),
        class_count=2,
    )
    return data, Hyperparams(alpha=(1.0, 1.0), ln_phi=2.0)


@pytest.fixture
def single_point():
    data = Dataset(
        features=np.array([[5.0]]),
        labels=np.array([0], dtype=np.int64),
        class_count=2,
    )
    return data, Hyperparams(alpha=(1.0, 1.0), ln_phi=2.0)


@pytest.fixture
def xor_grid():
    """The 2x2 XOR grid: label = parity of the two binary features."""
    features = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    labels = np.array([0, 1, 1, 0], dtype=np.int64)
    data = Dataset(features=features, labels=labels, class_count=2)
    return data, Hyperparams(alpha=(1.0, 1.0), ln_phi=2.0)


def random_dataset(rng, n=None, d=None, classes=2, levels=3):
    """A small random dataset with repeated feature values (few levels)."""
    if n is None:
        n = int(rng.integers(2, 7))
    if d is None:
        d = int(rng.integers(1, 3))
    features = rng.integers(0, levels, size=(n, d)).astype(float)
    labels = rng.integers(0, classes, size=n).astype(np.int64)
    labels[0] = 0  # keep every dataset legal even when a class is missing
    return Dataset(features=features, labels=labels, class_count=classes)


@pytest.fixture(scope="session")
def iris_bucketized():
    sklearn = pytest.importorskip("sklearn.datasets")
    raw = sklearn.load_iris()
    data = Dataset(
        features=raw.data.astype(np.float64),
        labels=raw.target.astype(np.int64),
        class_count=3,
        feature_names=tuple(raw.feature_names),
        label_names=tuple(raw.target_names),
    )
    return bucketize(data, 10)
