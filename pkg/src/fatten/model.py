"""The feature transfer network: pose predictor, appearance encoder,
residual decoder and category head.

Given a source feature ``x`` and a target pose cell ``j`` the network returns

    x_hat = x + decoder([appearance(x) ; pose_posterior(x) ; e_j])

so a decoder whose last linear layer is zero is exactly the identity map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .binning import PoseBinning
from .errors import DimensionError
from .nn import Activation, BatchNorm, Linear, Sequential, softmax
from .seeding import substream


@dataclass(frozen=True)
class ModelDims:
    feature_dim: int = 256
    num_cells: int = 12
    num_classes: int = 10
    pose_hidden: int = 128
    appearance_hidden: int = 256
    appearance_dim: int = 64
    decoder_hidden: int = 256

    @property
    def decoder_input(self):
        return self.appearance_dim + 2 * self.num_cells


class PosePredictor(Sequential):
    """FC + BN + ReLU, then FC to one logit per pose cell."""

    def __init__(self, feature_dim, hidden, num_cells, rng=None):
        super().__init__([
            ("fc1", Linear(feature_dim, hidden, rng, bias=False)),
            ("bn1", BatchNorm(hidden)),
            ("relu", Activation("relu")),
            ("fc2", Linear(hidden, num_cells, rng, gain=0.5)),
        ])

    def embedding(self, x):
        """Pre-softmax activations of the second FC layer (inference mode)."""
        return self.forward(x, training=False)

    def predict(self, x):
        return softmax(self.embedding(x))


class AppearanceEncoder(Sequential):
    def __init__(self, feature_dim, hidden, out_dim, rng=None):
        super().__init__([
            ("fc1", Linear(feature_dim, hidden, rng, bias=False)),
            ("bn1", BatchNorm(hidden)),
            ("elu1", Activation("elu")),
            ("fc2", Linear(hidden, out_dim, rng, bias=False)),
            ("bn2", BatchNorm(out_dim)),
            ("elu2", Activation("elu")),
        ])


class ResidualDecoder(Sequential):
    def __init__(self, in_dim, hidden, feature_dim, rng=None, out_gain=0.1):
        super().__init__([
            ("fc1", Linear(in_dim, hidden, rng, bias=False)),
            ("bn1", BatchNorm(hidden)),
            ("elu", Activation("elu")),
            # small output layer so an untrained decoder starts near the identity
            ("fc2", Linear(hidden, feature_dim, rng, gain=out_gain)),
        ])

    @property
    def output_layer(self):
        return self.layers[-1][1]


class CategoryHead(Sequential):
    def __init__(self, feature_dim, num_classes, rng=None):
        # reduced gain keeps the initial posterior close to uniform
        super().__init__([("fc", Linear(feature_dim, num_classes, rng, gain=0.5))])

    def logits(self, x):
        return self.forward(x, training=False)

    def predict(self, x):
        return softmax(self.logits(x))


@dataclass(eq=False)
class FattenModel:
    binning: PoseBinning
    dims: ModelDims
    pose: PosePredictor
    appearance: AppearanceEncoder
    decoder: ResidualDecoder
    category: CategoryHead
    metadata: dict = field(default_factory=dict)

    COMPONENTS = ("pose", "appearance", "decoder", "category")

    @classmethod
    def create(cls, binning, feature_dim, num_classes, seed=0, **hidden):
        dims = ModelDims(feature_dim=feature_dim, num_cells=binning.num_cells,
                         num_classes=num_classes, **hidden)
        rng = substream(seed, "init")
        return cls(
            binning, dims,
            PosePredictor(feature_dim, dims.pose_hidden, dims.num_cells, rng),
            AppearanceEncoder(feature_dim, dims.appearance_hidden, dims.appearance_dim, rng),
            ResidualDecoder(dims.decoder_input, dims.decoder_hidden, feature_dim, rng),
            CategoryHead(feature_dim, num_classes, rng),
            {"init_seed": int(seed)},
        )

    def tensors(self):
        """Every parameter and buffer, in checkpoint order."""
        out = {}
        for comp in self.COMPONENTS:
            net = getattr(self, comp)
            for lname, layer in net.layers:
                for k, v in {**layer.parameters(), **layer.buffers()}.items():
                    out[f"{comp}.{lname}.{k}"] = v
        return out

    def trainable(self):
        """Parameters updated by end-to-end training (encoder and decoder only)."""
        out = {f"appearance.{k}": v for k, v in self.appearance.parameters().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.parameters().items()})
        return out

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dims.feature_dim:
            raise DimensionError(
                f"features of shape {x.shape} do not match feature_dim {self.dims.feature_dim}")
        return x

    def predict_pose(self, x):
        return self.pose.predict(self._check(x))

    def pose_embedding(self, x):
        return self.pose.embedding(self._check(x))

    def predict_category(self, x):
        return self.category.predict(self._check(x))

    def decoder_input(self, x, target_bins, training=False):
        x = self._check(x)
        target_bins = np.broadcast_to(np.asarray(target_bins, dtype=np.int64), (x.shape[0],))
        a = self.appearance.forward(x, training=training)
        p = self.pose.predict(x)
        t = self.binning.one_hot(target_bins)
        return np.concatenate([a, p, t], axis=1)

    def transfer(self, x, target_bins):
        """Synthesize features at the target cells (inference mode)."""
        x = self._check(x)
        residual = self.decoder.forward(self.decoder_input(x, target_bins), training=False)
        return x + residual

    def transfer_to_pose(self, x, target_pose_values):
        return self.transfer(x, self.binning.encode_many(target_pose_values))

    def zero_decoder_output(self):
        out = self.decoder.output_layer
        out.weight[...] = 0.0
        out.bias[...] = 0.0

    def parameter_count(self):
        return sum(v.size for v in self.tensors().values())

    def dims_dict(self):
        return asdict(self.dims)
