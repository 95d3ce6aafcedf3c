"""Three-stage training: pose predictor, category head, then the
encoder/decoder under the multi-task loss with both heads frozen."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericsError, PrerequisiteError
from .nn import SGD, softmax_cross_entropy
from .seeding import substream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    pose_lr: float = 0.01
    pose_epochs: int = 200
    category_lr: float = 0.01
    category_epochs: int = 200
    lr: float = 0.01
    epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.9
    seed: int = 0
    pose_weight: float = 1.0
    category_weight: float = 1.0
    # restrict end-to-end training to these target cells (None = all)
    targets: Optional[Sequence[int]] = None

    def __post_init__(self):
        for name in ("pose_lr", "category_lr", "lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("pose_epochs", "category_epochs", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.pose_weight < 0 or self.category_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.targets is not None:
            self.targets = [int(t) for t in self.targets]

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown training options: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    stage: str
    seed: int
    history: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def losses(self, key="total"):
        return np.array([h[key] for h in self.history])


def _batches(order, batch_size):
    """Split ``order`` into batches, folding a trailing singleton into its neighbour."""
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def _finite_or_raise(value, stage, epoch, step):
    if not np.isfinite(value):
        raise NumericsError(
            f"non-finite loss {value} during {stage} (epoch {epoch}, step {step})")


def _classifier_epochs(net, features, labels, lr, epochs, config, stage, callback):
    if len(features) < 2:
        raise ConfigError(f"{stage} needs at least 2 training records")
    opt = SGD(lr, config.momentum)
    rng = substream(config.seed, "shuffle-" + stage)
    report = TrainReport(stage, config.seed)
    params = net.parameters()
    for epoch in range(epochs):
        order = rng.permutation(len(features))
        total = 0.0
        for step, idx in enumerate(_batches(order, config.batch_size)):
            logits = net.forward(features[idx], training=True)
            loss, _, grad = softmax_cross_entropy(logits, labels[idx])
            _finite_or_raise(loss, stage, epoch, step)
            net.backward(grad)
            opt.step(params, net.grads)
            total += loss * len(idx)
        entry = {"stage": stage, "epoch": epoch, "loss": total / len(features)}
        report.history.append(entry)
        if callback:
            callback(entry)
    return report


def _accuracy(predicted, labels):
    return float(np.mean(predicted == labels)) if len(labels) else float("nan")


def pretrain_pose_predictor(model, dataset, config, test=None, callback=None):
    """Fit ``model.pose`` to the pose-bin labels of ``dataset``."""
    start = time.perf_counter()
    report = _classifier_epochs(model.pose, dataset.features, dataset.pose_bins,
                                config.pose_lr, config.pose_epochs, config, "pose", callback)
    report.metrics["train_accuracy"] = _accuracy(
        model.predict_pose(dataset.features).argmax(1), dataset.pose_bins)
    if test is not None:
        report.metrics["test_accuracy"] = _accuracy(
            model.predict_pose(test.features).argmax(1), test.pose_bins)
    model.metadata["pose_pretrained"] = True
    model.metadata["pose_epochs"] = config.pose_epochs
    report.wall_clock = time.perf_counter() - start
    return model.pose, report


def pretrain_category_head(model, dataset, config, test=None, callback=None):
    """Fit the linear category head on source features."""
    start = time.perf_counter()
    report = _classifier_epochs(
        model.category, dataset.features, dataset.class_labels, config.category_lr,
        config.category_epochs, config, "category", callback)
    report.metrics["train_accuracy"] = _accuracy(
        model.predict_category(dataset.features).argmax(1), dataset.class_labels)
    if test is not None:
        report.metrics["test_accuracy"] = _accuracy(
            model.predict_category(test.features).argmax(1), test.class_labels)
    model.metadata["category_pretrained"] = True
    model.metadata["category_epochs"] = config.category_epochs
    report.wall_clock = time.perf_counter() - start
    return model.category, report


@dataclass(frozen=True)
class TransferPair:
    source: int
    target_bin: int
    class_label: int


@dataclass
class TransferPairs:
    """Columnar (source record, target cell) pairs."""

    source: np.ndarray
    target: np.ndarray
    class_labels: np.ndarray

    def __len__(self):
        return len(self.source)

    def __iter__(self):
        for s, t, y in zip(self.source, self.target, self.class_labels):
            yield TransferPair(int(s), int(t), int(y))


def build_transfer_pairs(dataset, binning, targets=None):
    """Pair every record with every target cell, its own cell included."""
    cells = np.arange(binning.num_cells) if targets is None else np.asarray(targets, np.int64)
    if cells.size and (cells.min() < 0 or cells.max() >= binning.num_cells):
        raise ConfigError(f"target cells must lie in [0, {binning.num_cells})")
    n = len(dataset)
    source = np.repeat(np.arange(n), len(cells))
    target = np.tile(cells, n)
    return TransferPairs(source, target, dataset.class_labels[source])


def multitask_loss(model, x_hat, target_bins, labels, pose_weight=1.0, category_weight=1.0,
                   with_grad=False):
    """``pose_weight * L_p + category_weight * L_c`` through the frozen heads.

    Returns ``(total, pose_loss, category_loss)``, plus the gradient with
    respect to ``x_hat`` when ``with_grad`` is set.
    """
    x_hat = model._check(x_hat)
    pose_logits = model.pose.forward(x_hat, training=False)
    lp, _, gp = softmax_cross_entropy(pose_logits, target_bins)
    cat_logits = model.category.forward(x_hat, training=False)
    lc, _, gc = softmax_cross_entropy(cat_logits, labels)
    total = pose_weight * lp + category_weight * lc
    if not with_grad:
        return total, lp, lc
    grad = np.zeros_like(x_hat)
    if pose_weight:
        grad += pose_weight * model.pose.backward(gp, param_grads=False)
    if category_weight:
        grad += category_weight * model.category.backward(gc, param_grads=False)
    return total, lp, lc, grad


def transfer_step(model, x, pose_posterior, target_bins, labels, config):
    """Forward and backward pass of the encoder/decoder on one batch.

    Leaves parameter gradients on the appearance encoder and decoder and
    returns ``(total, pose_loss, category_loss)``.
    """
    a = model.appearance.forward(x, training=True)
    t = model.binning.one_hot(target_bins)
    z = np.concatenate([a, pose_posterior, t], axis=1)
    x_hat = x + model.decoder.forward(z, training=True)
    total, lp, lc, grad = multitask_loss(
        model, x_hat, target_bins, labels, config.pose_weight, config.category_weight,
        with_grad=True)
    dz = model.decoder.backward(grad)
    model.appearance.backward(dz[:, :model.dims.appearance_dim])
    return total, lp, lc


def trainable_grads(model):
    out = {f"appearance.{k}": v for k, v in model.appearance.grads.items()}
    out.update({f"decoder.{k}": v for k, v in model.decoder.grads.items()})
    return out


def head_bytes(model):
    return b"".join(v.tobytes() for k, v in model.tensors().items()
                    if k.startswith(("pose.", "category.")))


def heldout_loss(model, dataset, targets=None, config=None):
    """Mean multi-task loss of inference-mode transfers over all pairs."""
    config = config or TrainConfig()
    pairs = build_transfer_pairs(dataset, model.binning, targets)
    x = dataset.features[pairs.source]
    x_hat = model.transfer(x, pairs.target)
    total, lp, lc = multitask_loss(model, x_hat, pairs.target, pairs.class_labels,
                                   config.pose_weight, config.category_weight)
    return {"total": total, "pose_loss": lp, "category_loss": lc}


def train_fatten(model, dataset, config, test=None, callback=None):
    """Train the appearance encoder and decoder; the heads stay bitwise frozen."""
    if not (model.metadata.get("pose_pretrained") and model.metadata.get("category_pretrained")):
        raise PrerequisiteError(
            "end-to-end training needs a pre-trained pose predictor and category head "
            "(run `fatten pretrain` first)")
    if dataset.feature_dim != model.dims.feature_dim:
        raise DimensionError(
            f"dataset feature_dim {dataset.feature_dim} != model {model.dims.feature_dim}")
    start = time.perf_counter()
    frozen = head_bytes(model)
    pairs = build_transfer_pairs(dataset, model.binning, config.targets)
    posterior = model.predict_pose(dataset.features)
    opt = SGD(config.lr, config.momentum)
    params = model.trainable()
    rng = substream(config.seed, "shuffle-transfer")
    report = TrainReport("transfer", config.seed)
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        sums = np.zeros(3)
        for step, idx in enumerate(_batches(order, config.batch_size)):
            src = pairs.source[idx]
            losses = transfer_step(model, dataset.features[src], posterior[src],
                                   pairs.target[idx], pairs.class_labels[idx], config)
            _finite_or_raise(losses[0], "transfer", epoch, step)
            opt.step(params, trainable_grads(model))
            sums += np.array(losses) * len(idx)
        total, lp, lc = sums / len(pairs)
        entry = {"stage": "transfer", "epoch": epoch, "pose_loss": lp,
                 "category_loss": lc, "total": total}
        report.history.append(entry)
        log.debug("epoch %d: total %.4f (pose %.4f, category %.4f)", epoch, total, lp, lc)
        if callback:
            callback(entry)
    if head_bytes(model) != frozen:
        raise AssertionError("frozen pose predictor or category head changed during training")
    model.metadata["transfer_trained"] = True
    model.metadata["transfer_epochs"] = model.metadata.get("transfer_epochs", 0) + config.epochs
    model.metadata["train_seed"] = config.seed
    model.metadata["final_losses"] = report.history[-1]
    if test is not None:
        from .evaluation import transfer_accuracy
        report.metrics.update(transfer_accuracy(model, test, config.targets))
        report.metrics["heldout_loss"] = heldout_loss(model, test, config.targets, config)
    report.wall_clock = time.perf_counter() - start
    return model, report
