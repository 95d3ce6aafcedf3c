"""Dense layers with hand-derived backward passes, in float64 numpy.

Every layer caches what its backward pass needs during ``forward`` and
exposes live references to its parameters so optimizers and the gradient
checker can mutate them in place.  Batch-norm running statistics are
buffers, not parameters: they are checkpointed but never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateBatchError, DimensionError, NumericsError, StateError

PROB_FLOOR = 1e-12
ELU_ALPHA = 1.0
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

ACTIVATIONS = ("relu", "elu", "softmax")


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-d batch, got shape {x.shape}")
    return x


# -- linear -----------------------------------------------------------------

def linear_forward(weight, bias, x):
    x = _as_batch(x)
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"batch shape {x.shape} does not match weight shape {weight.shape}")
    return x @ weight.T + bias


def linear_backward(weight, x, upstream):
    """Return ``(input_grad, weight_grad, bias_grad)``."""
    x = _as_batch(x)
    upstream = _as_batch(upstream)
    if upstream.shape != (x.shape[0], weight.shape[0]):
        raise DimensionError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"forward output shape {(x.shape[0], weight.shape[0])}")
    return upstream @ weight, upstream.T @ x, upstream.sum(axis=0)


# -- batch norm -------------------------------------------------------------

@dataclass
class BatchNormCache:
    mode: str
    x_hat: np.ndarray
    inv_std: np.ndarray


def batchnorm_forward(gamma, beta, running_mean, running_var, x, mode,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Normalize ``x`` per feature.

    In ``"training"`` mode the batch statistics are used and the running
    statistics are updated in place; in ``"inference"`` mode only the
    running statistics are read.  Returns ``(output, cache)``.
    """
    x = _as_batch(x)
    if x.shape[1] != gamma.shape[0]:
        raise DimensionError(
            f"batch shape {x.shape} does not match {gamma.shape[0]} features")
    if mode == "training":
        n = x.shape[0]
        if n < 2:
            raise DegenerateBatchError(
                f"batch norm in training mode needs at least 2 rows, got {n}")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        # unbiased estimate for the running variance, as in common frameworks
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    elif mode == "inference":
        mean = running_mean
        var = running_var
    else:
        raise ConfigError(f"unknown batch norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    return gamma * x_hat + beta, BatchNormCache(mode, x_hat, inv_std)


def batchnorm_backward(gamma, cache, upstream):
    """Return ``(input_grad, gamma_grad, beta_grad)`` for a training-mode pass."""
    if cache.mode != "training":
        raise StateError("batchnorm_backward needs a forward pass cached in training mode")
    dy = _as_batch(upstream)
    if dy.shape != cache.x_hat.shape:
        raise DimensionError(
            f"upstream gradient shape {dy.shape} does not match {cache.x_hat.shape}")
    x_hat = cache.x_hat
    beta_grad = dy.sum(axis=0)
    gamma_grad = (dy * x_hat).sum(axis=0)
    dx_hat = dy * gamma
    n = dy.shape[0]
    dx = (cache.inv_std / n) * (
        n * dx_hat - dx_hat.sum(axis=0) - x_hat * (dx_hat * x_hat).sum(axis=0))
    return dx, gamma_grad, beta_grad


def batchnorm_inference_input_grad(gamma, cache, upstream):
    """Input gradient through a frozen, inference-mode batch norm (an affine map)."""
    if cache.mode != "inference":
        raise StateError("expected a forward pass cached in inference mode")
    return _as_batch(upstream) * (gamma * cache.inv_std)


# -- activations ------------------------------------------------------------

def softmax(x):
    x = _as_batch(x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def activation_forward(kind, x):
    x = _as_batch(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "elu":
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "softmax":
        return softmax(x)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(kind, x, y, upstream):
    """Gradient w.r.t. the activation input, given its input ``x`` and output ``y``."""
    dy = _as_batch(upstream)
    if kind == "relu":
        return dy * (x > 0)
    if kind == "elu":
        return dy * np.where(x > 0, 1.0, y + ELU_ALPHA)
    if kind == "softmax":
        return y * (dy - (dy * y).sum(axis=1, keepdims=True))
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# -- losses -----------------------------------------------------------------

def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    return labels.astype(np.intp)


def cross_entropy(probabilities, labels):
    """Mean negative log-probability of the labelled class, floored at 1e-12."""
    p = _as_batch(probabilities)
    labels = _check_labels(labels, p.shape[0], p.shape[1])
    picked = p[np.arange(p.shape[0]), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def softmax_cross_entropy(logits, labels):
    """Cross-entropy of ``softmax(logits)``; returns ``(loss, probs, logit_grad)``."""
    probs = softmax(logits)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    loss = cross_entropy(probs, labels)
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    grad /= probs.shape[0]
    return loss, probs, grad


# -- layers -----------------------------------------------------------------

class Layer:
    """Base layer: parameters get gradients, buffers are plain state."""

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, upstream, param_grads=True):
        raise NotImplementedError


class Linear(Layer):
    """Fully-connected layer.  ``bias=False`` for layers feeding a batch norm,
    whose mean subtraction would cancel the bias anyway."""

    def __init__(self, in_features, out_features, rng=None, gain=np.sqrt(2.0), bias=True):
        self.weight = np.zeros((out_features, in_features))
        self.bias = np.zeros(out_features)
        self.use_bias = bias
        if rng is not None:
            # fan-in scaled uniform init
            bound = gain * np.sqrt(3.0 / in_features)
            self.weight[...] = rng.uniform(-bound, bound, size=self.weight.shape)
        self.grads = {}
        self._x = None

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def parameters(self):
        if not self.use_bias:
            return {"weight": self.weight}
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, training=False):
        self._x = _as_batch(x)
        return linear_forward(self.weight, self.bias, self._x)

    def backward(self, upstream, param_grads=True):
        dx, dw, db = linear_backward(self.weight, self._x, upstream)
        if param_grads:
            self.grads = {"weight": dw, "bias": db} if self.use_bias else {"weight": dw}
        return dx


class BatchNorm(Layer):
    def __init__(self, num_features, eps=BN_EPS, momentum=BN_MOMENTUM):
        self.gamma = np.ones(num_features)
        self.beta = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.eps = eps
        self.momentum = momentum
        self.grads = {}
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        mode = "training" if training else "inference"
        out, self._cache = batchnorm_forward(
            self.gamma, self.beta, self.running_mean, self.running_var, x, mode,
            eps=self.eps, momentum=self.momentum)
        return out

    def backward(self, upstream, param_grads=True):
        if self._cache.mode == "inference":
            if param_grads:
                raise StateError(
                    "parameter gradients of batch norm need a training-mode forward pass")
            return batchnorm_inference_input_grad(self.gamma, self._cache, upstream)
        dx, dgamma, dbeta = batchnorm_backward(self.gamma, self._cache, upstream)
        if param_grads:
            self.grads = {"gamma": dgamma, "beta": dbeta}
        return dx


class Activation(Layer):
    def __init__(self, kind):
        if kind not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
        self.kind = kind
        self.grads = {}
        self._x = self._y = None

    def forward(self, x, training=False):
        self._x = _as_batch(x)
        self._y = activation_forward(self.kind, self._x)
        return self._y

    def backward(self, upstream, param_grads=True):
        return activation_backward(self.kind, self._x, self._y, upstream)


class Sequential(Layer):
    """Named chain of layers; parameter names are ``"<layer>.<param>"``."""

    def __init__(self, layers):
        self.layers = list(layers)

    def __iter__(self):
        return iter(self.layers)

    def named_layers(self):
        return self.layers

    def parameters(self):
        out = {}
        for name, layer in self.layers:
            for pname, arr in layer.parameters().items():
                out[f"{name}.{pname}"] = arr
        return out

    def buffers(self):
        out = {}
        for name, layer in self.layers:
            for bname, arr in layer.buffers().items():
                out[f"{name}.{bname}"] = arr
        return out

    @property
    def grads(self):
        out = {}
        for name, layer in self.layers:
            for pname, arr in layer.grads.items():
                out[f"{name}.{pname}"] = arr
        return out

    def forward(self, x, training=False):
        for _, layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, upstream, param_grads=True):
        for _, layer in reversed(self.layers):
            upstream = layer.backward(upstream, param_grads=param_grads)
        return upstream


# -- optimizer --------------------------------------------------------------

class SGD:
    """Gradient descent with classical momentum: ``v <- mu*v - lr*g; theta <- theta + v``."""

    def __init__(self, learning_rate, momentum=0.9):
        if learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {learning_rate}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise NumericsError(f"non-finite gradient in {', '.join(sorted(bad))}")
        for name, theta in params.items():
            g = grads[name]
            if g.shape != theta.shape:
                raise DimensionError(
                    f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(theta)
            v *= self.momentum
            v -= self.learning_rate * g
            theta += v


def sgd_step(params, grads, learning_rate, momentum_state, momentum=0.9):
    """Functional form of one SGD step; ``momentum_state`` is updated in place."""
    opt = SGD(learning_rate, momentum)
    opt.velocity = momentum_state
    opt.step(params, grads)
    return params


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-5
    passed: bool = True

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def failures(self):
        return {k: v for k, v in self.errors.items() if not v < self.tolerance}


def relative_error(analytic, numeric):
    """``|a - n| / max(|a|, |n|, 1e-8)`` measured with tensor 2-norms."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def gradient_check(loss_and_grads, params, tolerance=1e-5, step=1e-5, corrupt=None):
    """Compare analytic gradients against central differences.

    ``loss_and_grads()`` must evaluate the loss deterministically from the
    current contents of ``params`` (a name -> array mapping of live arrays)
    and return ``(loss, grads)``.  ``corrupt`` names one tensor whose analytic
    gradient is scaled by 1.1, for fault-injection runs.
    """
    _, analytic = loss_and_grads()
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] * 1.1
    report = GradCheckReport(tolerance=tolerance)
    for name, theta in params.items():
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_and_grads()[0]
            flat[i] = orig - step
            minus = loss_and_grads()[0]
            flat[i] = orig
            out[i] = (plus - minus) / (2.0 * step)
        report.errors[name] = relative_error(analytic[name], numeric)
    report.passed = all(v < tolerance for v in report.errors.values())
    return report
