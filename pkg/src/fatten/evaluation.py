"""Measurement suite: pose-error histogram, accuracy of generated features,
distance-based retrieval mAP, and the few-shot augmentation experiment."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .seeding import substream

RELEVANCE_MODES = ("pose", "category", "both")
DISTANCES = ("d1", "d2", "dc")


# -- pose error histogram ---------------------------------------------------

def histogram_from_bins(binning, predicted, true):
    """Percentage of cases per folded error magnitude (in attribute units)."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if binning.angular:
        n_buckets = binning.num_bins // 2 + 1
    else:
        n_buckets = binning.num_cells
    steps = binning.circular_distance(predicted, true)
    counts = np.bincount(steps, minlength=n_buckets)[:n_buckets]
    total = max(len(true), 1)
    return {
        "error": [float(binning.width * k) for k in range(n_buckets)],
        "percent": [100.0 * c / total for c in counts],
        "count": [int(c) for c in counts],
    }


def pose_error_histogram(model, dataset):
    predicted = model.predict_pose(dataset.features).argmax(axis=1)
    return histogram_from_bins(model.binning, predicted, dataset.pose_bins)


# -- accuracy of generated features -----------------------------------------

def _transfer_all(model, features, targets, chunk=4096):
    """Transfer every row to every target; rows are ordered source-major."""
    targets = np.asarray(targets, dtype=np.int64)
    src = np.repeat(np.arange(len(features)), len(targets))
    tgt = np.tile(targets, len(features))
    out = np.empty((len(src), features.shape[1]))
    for i in range(0, len(src), chunk):
        sl = slice(i, i + chunk)
        out[sl] = model.transfer(features[src[sl]], tgt[sl])
    return out, src, tgt


def transfer_accuracy(model, dataset, targets=None):
    """Pose/category accuracy (in %) of features transferred to every target cell."""
    targets = np.arange(model.binning.num_cells) if targets is None else np.asarray(targets)
    generated, src, tgt = _transfer_all(model, dataset.features, targets)
    pose_pred = model.predict_pose(generated).argmax(axis=1)
    cat_pred = model.predict_category(generated).argmax(axis=1)
    real_pose = model.predict_pose(dataset.features).argmax(axis=1)
    real_cat = model.predict_category(dataset.features).argmax(axis=1)
    return {
        "pose_accuracy": 100.0 * float(np.mean(pose_pred == tgt)),
        "category_accuracy": 100.0 * float(np.mean(cat_pred == dataset.class_labels[src])),
        "real_pose_accuracy": 100.0 * float(np.mean(real_pose == dataset.pose_bins)),
        "real_category_accuracy": 100.0 * float(np.mean(real_cat == dataset.class_labels)),
        "num_generated": int(len(generated)),
    }


# -- distances --------------------------------------------------------------

def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"cannot compare vectors of shapes {x.shape} and {y.shape}")
    return x, y


def d1(x, y):
    x, y = _pair(x, y)
    return float(np.linalg.norm(x - y))


def d2(x, y, model):
    x, y = _pair(x, y)
    g = model.pose_embedding(np.stack([x, y]))
    return float(np.linalg.norm(g[0] - g[1]))


def dc(x, y, model, lam=1.0):
    return d1(x, y) + lam * d2(x, y, model)


def pairwise_euclidean(a, b):
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


# -- average precision ------------------------------------------------------

def average_precision(relevance):
    """Non-interpolated AP of a binary relevance vector given in rank order.

    Zero relevant items give AP 0.  Summation is exact-rounded (``fsum``) so
    the result does not depend on evaluation order.
    """
    rel = np.asarray(relevance, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return 0.0
    precisions = np.arange(1, hits.size + 1) / (hits + 1)
    return math.fsum(precisions.tolist()) / hits.size


def mean_average_precision(aps):
    aps = list(aps)
    return math.fsum(aps) / len(aps) if aps else 0.0


@dataclass
class RetrievalTask:
    """Leave-one-out retrieval within one labelled set of features.

    Every item is used as a query against all other items; ``relevance``
    decides which labels count as a hit and ``distance`` which metric ranks.
    """

    features: np.ndarray
    pose_bins: np.ndarray
    class_labels: np.ndarray
    relevance: str = "pose"
    distance: str = "d2"
    lam: float = 1.0
    queries: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.relevance not in RELEVANCE_MODES:
            raise ConfigError(f"relevance must be one of {RELEVANCE_MODES}")
        if self.distance not in DISTANCES:
            raise ConfigError(f"distance must be one of {DISTANCES}")
        if len(self.features) < 2:
            raise ConfigError("retrieval needs at least two items")

    def relevant(self, q, gallery):
        same_pose = self.pose_bins[gallery] == self.pose_bins[q, None]
        same_cat = self.class_labels[gallery] == self.class_labels[q, None]
        if self.relevance == "pose":
            return same_pose
        if self.relevance == "category":
            return same_cat
        return same_pose & same_cat


def retrieval_aps(task, model=None, chunk=256):
    """Per-query AP; distance ties are broken by gallery index."""
    x = np.asarray(task.features, dtype=np.float64)
    n = len(x)
    queries = np.arange(n) if task.queries is None else np.asarray(task.queries)
    emb = None
    if task.distance in ("d2", "dc"):
        if model is None:
            raise ConfigError(f"distance {task.distance} needs a model for pose embeddings")
        emb = model.pose_embedding(x)
    aps = []
    for i in range(0, len(queries), chunk):
        q = queries[i:i + chunk]
        if task.distance == "d1":
            dist = pairwise_euclidean(x[q], x)
        elif task.distance == "d2":
            dist = pairwise_euclidean(emb[q], emb)
        else:
            dist = pairwise_euclidean(x[q], x) + task.lam * pairwise_euclidean(emb[q], emb)
        dist[np.arange(len(q)), q] = np.inf
        order = np.argsort(dist, axis=1, kind="stable")
        ranked = order[order != q[:, None]].reshape(len(q), n - 1)
        rel = task.relevant(q, ranked)
        aps.extend(average_precision(rel[r]) for r in range(len(q)))
    return aps


def retrieval_map(task, model=None):
    return mean_average_precision(retrieval_aps(task, model))


def retrieval_table(model, dataset, lam=1.0, max_queries=None, seed=0):
    """mAP (%) of real and generated test features for pose, category and both."""
    generated, src, tgt = _transfer_all(model, dataset.features,
                                        np.arange(model.binning.num_cells))
    sets = {
        "real": (dataset.features, dataset.pose_bins, dataset.class_labels),
        "generated": (generated, tgt, dataset.class_labels[src]),
    }
    table = {}
    for name, (feats, poses, labels) in sets.items():
        queries = None
        if max_queries is not None and max_queries < len(feats):
            rng = substream(seed, "retrieval-queries")
            queries = np.sort(rng.choice(len(feats), size=max_queries, replace=False))
        row = {}
        for mode, dist in (("pose", "d2"), ("category", "d1"), ("both", "dc")):
            task = RetrievalTask(feats, poses, labels, mode, dist, lam, queries)
            row[mode] = 100.0 * retrieval_map(task, model)
        row["num_items"] = int(len(feats))
        table[name] = row
    table["lambda"] = lam
    return table


# -- linear SVM -------------------------------------------------------------

@dataclass
class SVMConfig:
    C: float = 1.0
    epochs: int = 200
    lr: float = 0.01
    decay: float = 1.0

    def __post_init__(self):
        if self.C <= 0 or self.lr <= 0 or self.epochs < 1 or self.decay < 0:
            raise ConfigError(f"invalid SVM settings {self}")


class LinearSVM:
    """One-vs-rest linear SVM with L2-regularized hinge loss.

    Each binary problem minimizes ``||w||^2 / (2 C n) + mean_i hinge_i``
    (the usual C-SVM objective divided by ``C n``) by full-batch
    sub-gradient descent with step ``lr / (1 + decay * t)``.  No randomness
    is involved, so identical inputs give identical weights.
    """

    def __init__(self, config=None):
        self.config = config or SVMConfig()
        self.classes = None
        self.weight = None
        self.bias = None

    def fit(self, features, labels):
        x = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        self.classes = np.unique(labels)
        if len(self.classes) < 2:
            raise ConfigError("a linear SVM needs at least two classes")
        n, d = x.shape
        k = len(self.classes)
        y = np.where(labels[:, None] == self.classes[None, :], 1.0, -1.0)
        w = np.zeros((k, d))
        b = np.zeros(k)
        lam = 1.0 / (self.config.C * n)
        for t in range(self.config.epochs):
            eta = self.config.lr / (1.0 + self.config.decay * t)
            margin = y * (x @ w.T + b)
            active = (margin < 1.0) * y  # n x k
            gw = lam * w - (active.T @ x) / n
            gb = -active.sum(axis=0) / n
            w -= eta * gw
            b -= eta * gb
        self.weight, self.bias = w, b
        return self

    def decision_function(self, features):
        return np.asarray(features, dtype=np.float64) @ self.weight.T + self.bias

    def predict(self, features):
        return self.classes[np.argmax(self.decision_function(features), axis=1)]

    def score(self, features, labels):
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def linear_svm_train(features, labels, config=None):
    return LinearSVM(config).fit(features, labels)


# -- few-shot experiment ----------------------------------------------------

@dataclass
class FewShotConfig:
    shots: int = 1
    # pose values to synthesize; None means every cell centroid
    targets: Optional[Sequence[float]] = None
    repetitions: int = 100
    svm: SVMConfig = field(default_factory=SVMConfig)
    seed: int = 0
    oracle: bool = True

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigError(f"shots must be >= 1, got {self.shots}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if isinstance(self.svm, dict):
            self.svm = SVMConfig(**self.svm)


def _paired_t(delta):
    delta = np.asarray(delta, dtype=np.float64)
    if len(delta) < 2:
        return float("nan")
    sd = delta.std(ddof=1)
    if sd == 0:
        return float("inf") if delta.mean() > 0 else float("nan")
    return float(delta.mean() / (sd / np.sqrt(len(delta))))


def _summary(values):
    values = np.asarray(values, dtype=np.float64)
    return {"mean": float(values.mean()), "std": float(values.std())}


def few_shot_experiment(model, dataset, config=None):
    """Baseline vs augmented SVMs trained on ``shots`` samples per class.

    Each repetition samples instances per class, trains the baseline on them,
    trains the augmented SVM on the same instances plus their transfers to
    every target pose, and scores both on the records of all other objects.
    With ``oracle`` and a synthetic dataset, a third SVM is augmented with
    exact noise-free manifold features instead of transfers.
    """
    config = config or FewShotConfig()
    binning = model.binning
    if config.targets is None:
        target_values = binning.centroids
    else:
        target_values = np.asarray(config.targets, dtype=np.float64)
    target_bins = binning.encode_many(target_values) if len(target_values) else \
        np.zeros(0, np.int64)
    classes = np.unique(dataset.class_labels)
    if len(classes) < 2:
        raise ConfigError("few-shot evaluation needs at least two classes")
    by_class = {c: np.flatnonzero(dataset.class_labels == c) for c in classes}
    for c, idx in by_class.items():
        if len(idx) < config.shots + 1:
            raise ConfigError(
                f"class {c} has {len(idx)} instances; need at least {config.shots + 1}")
    use_oracle = config.oracle and dataset.spec is not None and len(target_values) > 0
    rng = substream(config.seed, "fewshot")
    runs = {"baseline": [], "augmented": []}
    if use_oracle:
        runs["oracle"] = []
    for _ in range(config.repetitions):
        picked = np.concatenate([rng.choice(by_class[c], size=config.shots, replace=False)
                                 for c in classes])
        held_out = ~np.isin(dataset.object_ids, dataset.object_ids[picked])
        if not held_out.any():
            raise ConfigError("no evaluation records remain after sampling")
        x_eval = dataset.features[held_out]
        y_eval = dataset.class_labels[held_out]
        x_shot = dataset.features[picked]
        y_shot = dataset.class_labels[picked]
        baseline = LinearSVM(config.svm).fit(x_shot, y_shot)
        runs["baseline"].append(100.0 * baseline.score(x_eval, y_eval))
        if len(target_bins):
            synth, src, _ = _transfer_all(model, x_shot, target_bins)
            x_aug = np.concatenate([x_shot, synth])
            y_aug = np.concatenate([y_shot, y_shot[src]])
        else:
            x_aug, y_aug = x_shot, y_shot
        augmented = LinearSVM(config.svm).fit(x_aug, y_aug)
        runs["augmented"].append(100.0 * augmented.score(x_eval, y_eval))
        if use_oracle:
            spec = dataset.spec
            exact = [spec.oracle(spec.object_appearance(c, o), target_values)
                     for c, o in zip(y_shot, dataset.object_ids[picked])]
            x_or = np.concatenate([x_shot] + exact)
            y_or = np.concatenate([y_shot, np.repeat(y_shot, len(target_values))])
            runs["oracle"].append(100.0 * LinearSVM(config.svm).fit(x_or, y_or).score(
                x_eval, y_eval))
    delta = np.asarray(runs["augmented"]) - np.asarray(runs["baseline"])
    report = {
        "shots": config.shots,
        "repetitions": config.repetitions,
        "num_targets": int(len(target_values)),
        "accuracy": {k: _summary(v) for k, v in runs.items()},
        "gain": {**_summary(delta), "t_statistic": _paired_t(delta)},
        "runs": {k: [float(v) for v in vals] for k, vals in runs.items()},
    }
    return report


# -- report -----------------------------------------------------------------

@dataclass
class EvalReport:
    """Collected results; every field is JSON-compatible."""

    histogram: Optional[dict] = None
    transfer: Optional[dict] = None
    retrieval: Optional[dict] = None
    fewshot: Optional[dict] = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def table_csv(self, table):
        """CSV text for report table 1, 2, 3 or 5."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if table == 1:
            h = self.histogram
            w.writerow(["error"] + [f"{e:g}" for e in h["error"]])
            w.writerow(["percent"] + [f"{p:.2f}" for p in h["percent"]])
        elif table == 2:
            t = self.transfer
            w.writerow(["features", "pose_accuracy", "category_accuracy"])
            w.writerow(["real", f"{t['real_pose_accuracy']:.2f}",
                        f"{t['real_category_accuracy']:.2f}"])
            w.writerow(["generated", f"{t['pose_accuracy']:.2f}",
                        f"{t['category_accuracy']:.2f}"])
        elif table == 3:
            r = self.retrieval
            w.writerow(["features", "pose", "category", "pose_and_category"])
            for name in ("real", "generated"):
                w.writerow([name] + [f"{r[name][m]:.2f}" for m in ("pose", "category", "both")])
        elif table == 5:
            f = self.fewshot
            w.writerow(["method", "shots", "mean_accuracy", "std_accuracy"])
            for name, s in f["accuracy"].items():
                w.writerow([name, f["shots"], f"{s['mean']:.2f}", f"{s['std']:.2f}"])
        else:
            raise ConfigError(f"no table {table}; expected 1, 2, 3 or 5")
        return buf.getvalue()
