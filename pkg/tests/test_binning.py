from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from fatten.binning import PoseBinning
from fatten.errors import ConfigError, RangeError, ValidationError


def test_default_interval_examples():
    b = PoseBinning()
    idx, one_hot = b.encode(15.0)
    assert idx == 0 and np.array_equal(one_hot, np.eye(12)[0])
    assert b.encode(0.0)[0] == 0
    assert b.encode(359.9)[0] == 11
    assert b.encode(360.0)[0] == 0
    assert b.encode(-15.0)[0] == 11
    assert b.encode(725.0)[0] == 0


def test_centroids_are_midpoints_and_identity_permutation():
    b = PoseBinning()
    assert np.array_equal(b.centroids, 15.0 + 30.0 * np.arange(12))
    assert np.array_equal(b.encode_many(b.centroids), np.arange(12))
    assert b.decode(3) == 105.0
    with pytest.raises(RangeError):
        b.decode(12)


@given(st.integers(2, 40), st.floats(-1e3, 1e3), st.floats(0.5, 1e3),
       st.floats(0.0, 1.0, exclude_max=True))
def test_decode_encode_returns_containing_cell(n, lo, span, frac):
    b = PoseBinning(lo, lo + span, n, angular=False)
    v = lo + frac * span
    assume(v < b.hi)  # lo + frac * span can round up onto the excluded upper edge
    idx = int(b.encode_many([v])[0])
    assert 0 <= idx < n
    left = lo + idx * b.width
    # floating point may place v on either side of an exact boundary
    assert left - 1e-9 * span <= v < left + b.width + 1e-9 * span
    assert b.encode_many([b.decode(idx)])[0] == idx


@given(st.integers(1, 30), st.lists(st.integers(0, 29), min_size=1, max_size=10))
def test_one_hot_has_single_one(n, raw):
    b = PoseBinning(0, 360, n)
    idx = np.array([r % n for r in raw])
    oh = b.one_hot(idx)
    assert oh.shape == (len(idx), n)
    assert np.array_equal(oh.sum(axis=1), np.ones(len(idx)))
    assert np.array_equal(oh.argmax(axis=1), idx)


def test_errors():
    with pytest.raises(ValidationError):
        PoseBinning().encode(float("nan"))
    linear = PoseBinning(0.0, 5.0, 5, angular=False)
    with pytest.raises(RangeError):
        linear.encode(5.0)
    with pytest.raises(RangeError):
        linear.encode(-0.1)
    with pytest.raises(RangeError):
        PoseBinning().one_hot([12])
    with pytest.raises(ConfigError):
        PoseBinning(1.0, 1.0, 3)
    with pytest.raises(ConfigError):
        PoseBinning(0.0, 360.0, 12, angular=True, open_ended=True)


def test_open_ended_cell():
    depth = PoseBinning(0.0, 5.0, 5, angular=False, open_ended=True)
    assert depth.num_cells == 6
    assert depth.encode(5.0)[0] == 5
    assert depth.encode(1e6)[0] == 5
    assert depth.decode(5) == 5.5
    assert depth.circular_distance(0, 5) == 5


def test_circular_distance_is_symmetric_and_folded():
    b = PoseBinning()
    a, c = np.meshgrid(np.arange(12), np.arange(12))
    d = b.circular_distance(a, c)
    assert np.array_equal(d, d.T)
    assert d.max() == 6
    assert b.circular_distance(0, 11) == 1
