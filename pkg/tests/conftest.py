"""Shared fixtures: synthetic datasets and the desk-scale trained models
used by the heavier acceptance checks."""

import os
from pathlib import Path

import numpy as np
import pytest

from robust_pll import core, data, evaluate


def make_image_classes(n, seed=20250810, k=10, d=64, sigma=0.55):
    """Class-prototype 'images': each instance is its class prototype
    plus Gaussian pixel noise, clipped to the unit box.  The noise level
    puts the probe classifier in a regime with substantial confusions."""
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0.0, 1.0, (k, d))
    y = rng.integers(0, k, n)
    X = np.clip(protos[y] + sigma * rng.normal(size=(n, d)), 0.0, 1.0)
    return X, y


def random_partial_dataset(n, k, d, seed, extra_prob=0.35):
    """Random features with random candidate sets that always contain the
    true label."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (n, d))
    y = rng.integers(0, k, n)
    cand = rng.random((n, k)) < extra_prob
    cand[np.arange(n), y] = True
    return data.PartialDataset(X, cand, y)


_MNIST_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def find_mnist():
    """Locate a local MNIST IDX quartet, if one was provided.

    Checked locations: $ROBUST_PLL_DATA_DIR, ./data, ./data/mnist.  The
    environment has no dataset download route, so tests that need the
    real data skip when this returns None.
    """
    roots = []
    if os.environ.get("ROBUST_PLL_DATA_DIR"):
        roots.append(Path(os.environ["ROBUST_PLL_DATA_DIR"]))
    roots += [Path("data"), Path("data/mnist")]
    for root in roots:
        paths = {key: root / name for key, name in _MNIST_NAMES.items()}
        if all(p.is_file() for p in paths.values()):
            return paths
    return None


class DeskSetup:
    """Synthetic stand-in for the noisy-MNIST desk-scale protocol:
    5000 training instances, probe-generated candidate noise, 50 epochs
    for both the evidential method and the softmax baseline."""

    def __init__(self):
        n_train, n_test = 5000, 1500
        X, y = make_image_classes(n_train + n_test)
        self.train_features, self.train_labels = X[:n_train], y[:n_train]
        self.test_features, self.test_labels = X[n_train:], y[n_train:]

        noise_cfg = data.NoiseConfig(seed=7, probe_epochs=20)
        self.noisy = data.generate_candidates(self.train_features, self.train_labels, noise_cfg)

        self.robust = core.train(
            self.noisy, core.TrainConfig(epochs=50, batch_size=256, seed=3, update_rule="mse")
        )
        self.proden = core.train(
            self.noisy, core.TrainConfig(epochs=50, batch_size=256, seed=3, update_rule="proden")
        )

        perm = np.random.default_rng(99).permutation(X.shape[1])
        self.ood_features = self.test_features[:, perm]


@pytest.fixture(scope="session")
def desk():
    return DeskSetup()


@pytest.fixture(scope="session")
def trained_2000():
    """30-epoch run on a 2000-instance synthetic dataset, used for the
    drift-bound check."""
    ds = random_partial_dataset(n=2000, k=6, d=20, seed=11)
    cfg = core.TrainConfig(epochs=30, batch_size=128, seed=5, hidden_dims=(32, 32))
    return ds, core.train(ds, cfg)
