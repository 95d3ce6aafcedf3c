from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from fatten.errors import ConfigError
from fatten.manifold import (ManifoldParams, build_manifold, oracle_feature, sample_dataset,
                             smoothness_constant)
from fatten.nn import SGD, Linear, softmax_cross_entropy


def _probe(x_train, y_train, x_test, y_test, k, epochs):
    """Test accuracy of a softmax-regression linear probe."""
    rng = np.random.default_rng(0)
    lin = Linear(x_train.shape[1], k, rng, gain=0.5)
    opt = SGD(0.05)
    for _ in range(epochs):
        for i in range(0, len(x_train), 64):
            sl = slice(i, i + 64)
            _, _, g = softmax_cross_entropy(lin.forward(x_train[sl]), y_train[sl])
            lin.backward(g)
            opt.step(lin.parameters(), lin.grads)
    return float(np.mean(lin.forward(x_test).argmax(axis=1) == y_test))


@pytest.fixture(scope="module")
def spec():
    return build_manifold(ManifoldParams())


def test_build_is_deterministic(spec):
    again = build_manifold(ManifoldParams())
    assert np.array_equal(spec.weights, again.weights)
    assert np.array_equal(spec.centroids, again.centroids)
    other = build_manifold(ManifoldParams(), seed=1)
    assert not np.array_equal(spec.weights, other.weights)
    assert np.isfinite(spec.weights).all()
    d = np.linalg.norm(spec.centroids[:, None] - spec.centroids[None], axis=-1)
    assert np.all(d[~np.eye(10, dtype=bool)] > 0)


@pytest.mark.parametrize("field,value", [("num_classes", 1), ("num_pose_bins", 1),
                                         ("feature_dim", 33), ("noise", -0.1),
                                         ("appearance_spread", float("nan"))])
def test_invalid_params(field, value):
    with pytest.raises(ConfigError):
        build_manifold(replace(ManifoldParams(), **{field: value}))


def test_closure_is_exact(spec):
    a = spec.object_appearance(3, 7)
    assert np.array_equal(oracle_feature(spec, a, 0.0), oracle_feature(spec, a, 360.0))
    assert np.linalg.norm(oracle_feature(spec, a, 0.0) - oracle_feature(spec, a, 360.0)) == 0


def test_continuity_and_smoothness(spec):
    a = spec.object_appearance(0, 0)
    grid = np.linspace(0, 360, 37)
    step = np.linalg.norm(spec.oracle(a, grid + 0.1) - spec.oracle(a, grid), axis=1)
    coarse = np.linalg.norm(spec.oracle(a, grid + 10.0) - spec.oracle(a, grid), axis=1)
    assert step.max() < 0.05 * coarse.mean()
    lip = smoothness_constant(spec, a, delta=1.0)
    for delta in (1.0, 0.5, 0.1):
        d = np.linalg.norm(spec.oracle(a, grid + delta) - spec.oracle(a, grid), axis=1)
        assert np.all(d <= 1.05 * lip * delta)


def test_oracle_is_pure(spec):
    a = spec.object_appearance(2, 5)
    assert np.array_equal(oracle_feature(spec, a, 42.0), oracle_feature(spec, a, 42.0))


def test_same_bin_closer_than_cross_bin(spec):
    a = spec.object_appearance(1, 3)
    x = spec.oracle(a, spec.binning.centroids)
    cross = np.linalg.norm(x[:, None] - x[None], axis=-1)[~np.eye(12, dtype=bool)]
    for c in spec.binning.centroids:
        same = np.linalg.norm(oracle_feature(spec, a, c - 10) - oracle_feature(spec, a, c + 10))
        assert same < np.median(cross)


def test_class_linear_separability_at_fixed_pose(spec):
    appearances = np.array([spec.object_appearance(c, 10_000 + 60 * c + o)
                            for c in range(10) for o in range(60)])
    labels = np.repeat(np.arange(10), 60)
    x = spec.oracle(appearances, np.full(600, 45.0))
    assert _probe(x, labels, x, labels, 10, 100) >= 0.99


def test_counting_and_split_hygiene(spec):
    train, test = sample_dataset(spec, (1, 1), poses_per_object=12)
    assert len(train) == len(test) == 10 * 12
    assert not set(train.object_ids) & set(test.object_ids)
    counts = train.cell_counts()
    assert np.all(counts == counts.flat[0])
    assert np.array_equal(train.pose_bins, spec.binning.encode_many(train.pose_values))


def test_balanced_needs_multiple_of_bins(spec):
    with pytest.raises(ConfigError):
        sample_dataset(spec, (2, 1), poses_per_object=7)
    with pytest.raises(ConfigError):
        sample_dataset(spec, (0, 1))


def test_zero_spread_and_noise_share_trajectories():
    spec = build_manifold(ManifoldParams(appearance_spread=0.0, noise=0.0))
    train, _ = sample_dataset(spec, (3, 1))
    for c in range(10):
        rows = train.features[train.class_labels == c].reshape(3, 12, -1)
        assert np.array_equal(rows[0], rows[1]) and np.array_equal(rows[0], rows[2])


def test_uniform_pose_mode_stays_in_cell(spec):
    train, _ = sample_dataset(spec, (2, 1), pose_mode="uniform", jitter=1.0)
    assert np.array_equal(train.pose_bins, np.tile(np.arange(12), 20))
    off = np.abs(train.pose_values - spec.binning.centroids[train.pose_bins])
    assert off.max() <= 15.0 and off.max() > 0


def test_sampling_is_deterministic(spec):
    a = sample_dataset(spec, (2, 1), split_seed=4)
    b = sample_dataset(spec, (2, 1), split_seed=4)
    assert a[0] == b[0] and a[1] == b[1]
    c = sample_dataset(spec, (2, 1), split_seed=5)
    assert not np.array_equal(a[0].features, c[0].features)


def test_default_spec_linear_probes(spec):
    train, test = sample_dataset(spec)
    assert _probe(train.features, train.pose_bins, test.features, test.pose_bins, 12, 50) >= 0.95
    assert _probe(train.features, train.class_labels, test.features, test.class_labels,
                  10, 50) >= 0.95
