"""Named random sub-streams derived from one master seed."""

import zlib

import numpy as np


def substream(seed, name, *extra):
    """Independent generator for stream ``name`` (e.g. "data", "init", "shuffle")."""
    key = [int(seed), zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
