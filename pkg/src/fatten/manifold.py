"""Synthetic pose manifolds standing in for CNN features.

Each object has an appearance vector ``a`` drawn around its class centroid.
Its feature at pose ``p`` is ``tanh(W [a ; g * fourier(p)])`` rescaled to unit
RMS, where ``fourier(p)`` stacks ``sin``/``cos`` of the first few harmonics of
the pose angle.  ``W`` is a frozen random matrix, so the whole generator is a
deterministic function of its parameters and seed, and the noise-free map
doubles as ground truth for transfer tests.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .binning import PoseBinning
from .errors import ConfigError
from .seeding import substream


@dataclass(frozen=True)
class ManifoldParams:
    num_classes: int = 10
    feature_dim: int = 256
    appearance_dim: int = 32
    num_pose_bins: int = 12
    pose_lo: float = 0.0
    pose_hi: float = 360.0
    harmonics: int = 3
    centroid_scale: float = 1.0
    appearance_spread: float = 1.0
    pose_gain: float = 3.0
    noise: float = 0.1
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_pose_bins < 2:
            raise ConfigError(f"num_pose_bins must be >= 2, got {self.num_pose_bins}")
        if self.appearance_dim < 1 or self.harmonics < 1:
            raise ConfigError("appearance_dim and harmonics must be positive")
        if self.feature_dim < self.appearance_dim + 2:
            raise ConfigError(
                f"feature_dim {self.feature_dim} must be >= appearance_dim + 2 "
                f"({self.appearance_dim + 2})")
        for name in ("centroid_scale", "appearance_spread", "pose_gain", "noise"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {value}")
        if not self.pose_hi > self.pose_lo:
            raise ConfigError(f"invalid pose range [{self.pose_lo}, {self.pose_hi})")


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    params: ManifoldParams
    centroids: np.ndarray
    weights: np.ndarray

    @property
    def binning(self):
        p = self.params
        return PoseBinning(p.pose_lo, p.pose_hi, p.num_pose_bins, angular=True)

    def fourier(self, pose_values):
        p = self.params
        span = p.pose_hi - p.pose_lo
        # wrap first so that lo and hi map to bitwise identical features
        theta = 2.0 * np.pi * np.mod(np.asarray(pose_values, dtype=np.float64) - p.pose_lo,
                                     span) / span
        k = np.arange(1, p.harmonics + 1)
        angles = theta[..., None] * k
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)

    def object_appearance(self, class_label, object_id):
        """Appearance of one object; depends only on the manifold seed and ids."""
        p = self.params
        rng = substream(p.seed, "appearance", int(object_id))
        return self.centroids[class_label] + p.appearance_spread * rng.standard_normal(
            p.appearance_dim)

    def oracle(self, appearance, pose_values):
        """Noise-free features for appearance rows and matching pose values."""
        a = np.atleast_2d(np.asarray(appearance, dtype=np.float64))
        f = np.atleast_2d(self.fourier(pose_values))
        if a.shape[0] == 1 and f.shape[0] > 1:
            a = np.repeat(a, f.shape[0], axis=0)
        z = np.concatenate([a, self.params.pose_gain * f], axis=1) @ self.weights.T
        h = np.tanh(z)
        return h / np.sqrt(np.mean(h * h, axis=1, keepdims=True))

    def to_dict(self):
        return asdict(self.params)

    def __eq__(self, other):
        return isinstance(other, ManifoldSpec) and self.params == other.params


def build_manifold(params=None, seed=None):
    """Create the frozen generator for ``params`` (``seed`` overrides ``params.seed``)."""
    params = params or ManifoldParams()
    if seed is not None:
        params = ManifoldParams(**{**asdict(params), "seed": int(seed)})
    params.validate()
    rng = substream(params.seed, "manifold")
    centroids = params.centroid_scale * rng.standard_normal(
        (params.num_classes, params.appearance_dim))
    in_dim = params.appearance_dim + 2 * params.harmonics
    # unit-variance pre-activations for unit-variance inputs
    weights = rng.standard_normal((params.feature_dim, in_dim)) / np.sqrt(in_dim)
    return ManifoldSpec(params, centroids, weights)


def oracle_feature(spec, appearance, pose_value):
    return spec.oracle(appearance, np.array([pose_value]))[0]


@dataclass(frozen=True)
class FeatureRecord:
    feature: np.ndarray
    pose_value: float
    pose_bin: int
    class_label: int
    object_id: int


@dataclass(eq=False)
class SyntheticDataset:
    """Columnar labelled feature set.  ``spec`` is None for external features."""

    features: np.ndarray
    pose_values: np.ndarray
    pose_bins: np.ndarray
    class_labels: np.ndarray
    object_ids: np.ndarray
    binning: PoseBinning
    num_classes: int
    split: str = "train"
    spec: Optional[ManifoldSpec] = field(default=None)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.pose_values = np.asarray(self.pose_values, dtype=np.float64)
        self.pose_bins = np.asarray(self.pose_bins, dtype=np.int64)
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64)

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def records(self):
        for i in range(len(self)):
            yield FeatureRecord(self.features[i], float(self.pose_values[i]),
                                int(self.pose_bins[i]), int(self.class_labels[i]),
                                int(self.object_ids[i]))

    def subset(self, index):
        index = np.asarray(index)
        return SyntheticDataset(
            self.features[index], self.pose_values[index], self.pose_bins[index],
            self.class_labels[index], self.object_ids[index], self.binning,
            self.num_classes, self.split, self.spec)

    def cell_counts(self):
        counts = np.zeros((self.num_classes, self.binning.num_cells), dtype=np.int64)
        np.add.at(counts, (self.class_labels, self.pose_bins), 1)
        return counts

    def __eq__(self, other):
        if not isinstance(other, SyntheticDataset):
            return NotImplemented
        return (self.binning == other.binning and self.num_classes == other.num_classes
                and self.split == other.split and self.spec == other.spec
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("features", "pose_values", "pose_bins",
                                  "class_labels", "object_ids")))


def _sample_split(spec, split, objects_per_class, poses_per_object, balance,
                  pose_mode, jitter, rng, first_object_id):
    p = spec.params
    binning = spec.binning
    n_bins = binning.num_bins
    n_obj = p.num_classes * objects_per_class
    rows = n_obj * poses_per_object
    features = np.empty((rows, p.feature_dim))
    poses = np.empty(rows)
    bins = np.empty(rows, dtype=np.int64)
    labels = np.empty(rows, dtype=np.int64)
    ids = np.empty(rows, dtype=np.int64)
    row = 0
    for c in range(p.num_classes):
        for j in range(objects_per_class):
            oid = first_object_id + c * objects_per_class + j
            a = spec.object_appearance(c, oid)
            if balance:
                cell = np.arange(poses_per_object) % n_bins
            else:
                cell = rng.integers(0, n_bins, size=poses_per_object)
            pv = binning.centroids[cell]
            if pose_mode == "uniform":
                pv = pv + binning.width * jitter * rng.uniform(-0.5, 0.5, size=poses_per_object)
            x = spec.oracle(a, pv)
            if p.noise > 0:
                x = x + p.noise * rng.standard_normal(x.shape)
            sl = slice(row, row + poses_per_object)
            features[sl] = x
            poses[sl] = pv
            bins[sl] = binning.encode_many(pv)
            labels[sl] = c
            ids[sl] = oid
            row += poses_per_object
    return SyntheticDataset(features, poses, bins, labels, ids, binning,
                            p.num_classes, split, spec)


def sample_dataset(spec, objects_per_class=(40, 10), poses_per_object=None,
                   balance=True, split_seed=0, pose_mode="centroid", jitter=1.0,
                   first_object_id=0):
    """Draw disjoint train and test splits from ``spec``.

    ``objects_per_class`` is a ``(train, test)`` pair.  With ``balance`` each
    object is observed ``poses_per_object / num_bins`` times in every cell, so
    ``poses_per_object`` must be a multiple of the bin count.  In ``"uniform"``
    pose mode values are drawn uniformly from a window of ``jitter`` bin
    widths centred on the cell centroid (``jitter=1`` covers the whole cell).
    """
    n_bins = spec.params.num_pose_bins
    poses_per_object = n_bins if poses_per_object is None else int(poses_per_object)
    n_train, n_test = (int(v) for v in objects_per_class)
    if min(n_train, n_test, poses_per_object) < 1:
        raise ConfigError("object and pose counts must be >= 1")
    if balance and poses_per_object % n_bins:
        raise ConfigError(
            f"balanced sampling needs poses_per_object to be a multiple of {n_bins}")
    if pose_mode not in ("centroid", "uniform"):
        raise ConfigError(f"pose_mode must be 'centroid' or 'uniform', got {pose_mode!r}")
    if not 0.0 <= jitter <= 1.0:
        raise ConfigError(f"jitter must lie in [0, 1], got {jitter}")
    rng = substream(split_seed, "data", spec.params.seed)
    train = _sample_split(spec, "train", n_train, poses_per_object, balance, pose_mode,
                          jitter, rng, first_object_id)
    test_first = first_object_id + spec.params.num_classes * n_train
    test = _sample_split(spec, "test", n_test, poses_per_object, balance, pose_mode,
                         jitter, rng, test_first)
    return train, test


def smoothness_constant(spec, appearance, delta=1.0, samples=360):
    """Largest observed ``|phi(a,p) - phi(a,p+d)| / d`` over a pose sweep."""
    p = spec.params
    grid = np.linspace(p.pose_lo, p.pose_hi, samples, endpoint=False)
    x0 = spec.oracle(appearance, grid)
    x1 = spec.oracle(appearance, grid + delta)
    return float(np.max(np.linalg.norm(x1 - x0, axis=1)) / delta)
