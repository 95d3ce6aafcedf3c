"""Quantization of a continuous pose attribute into one-hot cells."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RangeError, ValidationError


@dataclass(frozen=True)
class PoseBinning:
    """``num_bins`` equal cells over ``[lo, hi)``.

    Angular binnings wrap values modulo the range.  Non-angular ones may carry
    an extra open-ended cell ``[hi, +inf)`` (depth-style attributes); that
    cell's representative is placed half a cell width past ``hi``.
    """

    lo: float = 0.0
    hi: float = 360.0
    num_bins: int = 12
    angular: bool = True
    open_ended: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.hi > self.lo):
            raise ConfigError(f"invalid pose range [{self.lo}, {self.hi})")
        if self.num_bins < 1:
            raise ConfigError(f"need at least one bin, got {self.num_bins}")
        if self.angular and self.open_ended:
            raise ConfigError("an angular binning cannot have an open-ended cell")

    @property
    def width(self):
        return (self.hi - self.lo) / self.num_bins

    @property
    def num_cells(self):
        return self.num_bins + int(self.open_ended)

    @property
    def centroids(self):
        return self.lo + self.width * (np.arange(self.num_cells) + 0.5)

    def decode(self, index):
        if not 0 <= index < self.num_cells:
            raise RangeError(f"cell index {index} outside [0, {self.num_cells})")
        return float(self.centroids[index])

    def encode_many(self, values):
        v = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValidationError("pose values must be finite")
        span = self.hi - self.lo
        if self.angular:
            v = self.lo + np.mod(v - self.lo, span)
        else:
            below = v < self.lo
            above = v >= self.hi
            if np.any(below) or (np.any(above) and not self.open_ended):
                bad = v[below | (above & (not self.open_ended))]
                raise RangeError(
                    f"pose value {bad.flat[0]} outside [{self.lo}, {self.hi})")
        idx = np.floor((v - self.lo) / self.width).astype(np.int64)
        if self.angular:
            # mod can round up to exactly `span` for tiny negative offsets
            idx[idx >= self.num_bins] = 0
        else:
            idx = np.minimum(idx, self.num_bins)
        return idx

    def encode(self, value):
        """Return ``(cell_index, one_hot)`` for a single value."""
        idx = int(self.encode_many(np.array([value]))[0])
        return idx, self.one_hot(idx)

    def one_hot(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.num_cells):
            raise RangeError(f"cell index outside [0, {self.num_cells})")
        out = np.zeros(indices.shape + (self.num_cells,))
        np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
        return out

    def circular_distance(self, a, b):
        """Cell-count distance between indices, folded for angular binnings."""
        d = np.abs(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))
        if self.angular:
            d = np.minimum(d, self.num_bins - d)
        return d

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "num_bins": self.num_bins,
                "angular": self.angular, "open_ended": self.open_ended}
