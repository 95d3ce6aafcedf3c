"""Finite-difference verification of every layer type and the composed model."""

from __future__ import annotations

import numpy as np

from .binning import PoseBinning
from .nn import (Activation, BatchNorm, GradCheckReport, Linear, gradient_check,
                 softmax_cross_entropy)
from .model import FattenModel
from .training import TrainConfig, trainable_grads, transfer_step

# small sizes keep 20 seeds of central differences well under a minute
D, N, K, BATCH = 7, 4, 3, 6


def _layer_case(layer, x, rng, with_input=True):
    """Loss ``sum(R * layer(x))`` with a fixed random projection ``R``."""
    out = layer.forward(x, training=True)
    proj = rng.standard_normal(out.shape)
    params = dict(layer.parameters())
    if with_input:
        params["input"] = x
    snapshot = {k: v.copy() for k, v in layer.buffers().items()}

    def f():
        y = layer.forward(x, training=True)
        dx = layer.backward(proj, param_grads=bool(layer.parameters()))
        grads = dict(getattr(layer, "grads", {}))
        grads["input"] = dx
        return float(np.sum(proj * y)), grads

    return f, params, snapshot


def _restore(layer, snapshot):
    for k, v in layer.buffers().items():
        v[...] = snapshot[k]


def _tiny_model(rng, seed):
    binning = PoseBinning(0.0, 360.0, N)
    model = FattenModel.create(binning, D, K, seed=seed, pose_hidden=5,
                               appearance_hidden=6, appearance_dim=4, decoder_hidden=6)
    # frozen heads with non-trivial inference statistics
    for comp in (model.pose, model.category):
        for _, layer in comp.layers:
            if isinstance(layer, BatchNorm):
                layer.running_mean[...] = rng.standard_normal(layer.running_mean.shape)
                layer.running_var[...] = rng.uniform(0.5, 2.0, layer.running_var.shape)
                layer.gamma[...] = rng.uniform(0.5, 1.5, layer.gamma.shape)
                layer.beta[...] = rng.standard_normal(layer.beta.shape)
    # a non-zero output layer so the residual path carries gradient
    model.decoder.output_layer.weight[...] = rng.standard_normal(
        model.decoder.output_layer.weight.shape)
    return model


def _cases(seed):
    """Yield ``(name, loss_and_grads, params, cleanup)`` for one seed."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((BATCH, D))

    yield ("linear",) + _with_cleanup(Linear(D, 5, rng), x, rng)
    bn = BatchNorm(D)
    bn.gamma[...] = rng.uniform(0.5, 1.5, D)
    bn.beta[...] = rng.standard_normal(D)
    yield ("batchnorm",) + _with_cleanup(bn, x, rng)
    for kind in ("relu", "elu", "softmax"):
        yield (kind,) + _with_cleanup(Activation(kind), x, rng)

    logits = rng.standard_normal((BATCH, N))
    labels = rng.integers(0, N, BATCH)

    def ce():
        loss, _, g = softmax_cross_entropy(logits, labels)
        return loss, {"input": g}
    yield "cross_entropy", ce, {"input": logits}, lambda: None

    model = _tiny_model(rng, seed)
    pose_labels = rng.integers(0, N, BATCH)

    def pose_loss():
        out = model.pose.forward(x, training=True)
        loss, _, g = softmax_cross_entropy(out, pose_labels)
        model.pose.backward(g)
        return loss, model.pose.grads
    snap = {k: v.copy() for k, v in model.pose.buffers().items()}

    def restore_pose():
        for k, v in model.pose.buffers().items():
            v[...] = snap[k]
    yield "pose_predictor", pose_loss, model.pose.parameters(), restore_pose

    # encoder/decoder with both frozen heads attached, under the multi-task loss
    posterior = model.predict_pose(x)
    targets = rng.integers(0, N, BATCH)
    classes = rng.integers(0, K, BATCH)
    cfg = TrainConfig(pose_weight=1.0, category_weight=1.0)
    bufs = {k: v.copy() for k, v in model.tensors().items()}

    def full_loss():
        total, _, _ = transfer_step(model, x, posterior, targets, classes, cfg)
        return total, trainable_grads(model)

    def restore_model():
        for k, v in model.tensors().items():
            if k not in model.trainable() and not np.array_equal(v, bufs[k]):
                v[...] = bufs[k]
    yield "fatten", full_loss, model.trainable(), restore_model


def _with_cleanup(layer, x, rng):
    f, params, snapshot = _layer_case(layer, x, rng)
    return f, params, lambda: _restore(layer, snapshot)


def run_gradcheck(seeds=20, tolerance=1e-5, corrupt=False):
    """Check every case over ``seeds`` seeds; errors are maxima across seeds.

    With ``corrupt`` the analytic gradient of the decoder's output weights is
    inflated by 10%, which must make the report fail.
    """
    report = GradCheckReport(tolerance=tolerance)
    for seed in range(seeds):
        for name, f, params, cleanup in _cases(seed):
            bad = "decoder.fc2.weight" if corrupt and name == "fatten" else None
            sub = gradient_check(f, params, tolerance=tolerance, corrupt=bad)
            cleanup()
            for pname, err in sub.errors.items():
                key = f"{name}/{pname}"
                report.errors[key] = max(report.errors.get(key, 0.0), err)
    report.passed = all(v < tolerance for v in report.errors.values())
    return report
