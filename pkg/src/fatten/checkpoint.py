"""Model checkpoints (``.fatc``).

Layout, little-endian::

    magic "FATC" | version u16
    dims     feature_dim, num_cells, num_classes, pose_hidden,
             appearance_hidden, appearance_dim, decoder_hidden      (7 x u32)
    bn       eps f64 | momentum f64
    count    number of f64 values that follow (u64)
    tensors  every parameter and batch-norm buffer, in FattenModel.tensors() order
    binning  lo f64 | hi f64 | num_bins u32 | angular u8 | open_ended u8
    trailer  length u32 | UTF-8 JSON metadata (sorted keys)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .binning import PoseBinning
from .errors import DimensionError, FormatError
from .model import FattenModel, ModelDims

MAGIC = b"FATC"
VERSION = 1
PREFIX = struct.Struct("<4sH7IddQ")
BINNING = struct.Struct("<ddIBB")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def encode_checkpoint(model):
    tensors = model.tensors()
    count = sum(v.size for v in tensors.values())
    bn = model.pose.layers[1][1]
    d = model.dims
    out = [PREFIX.pack(MAGIC, VERSION, d.feature_dim, d.num_cells, d.num_classes,
                       d.pose_hidden, d.appearance_hidden, d.appearance_dim, d.decoder_hidden,
                       bn.eps, bn.momentum, count)]
    out.extend(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    b = model.binning
    out.append(BINNING.pack(b.lo, b.hi, b.num_bins, int(b.angular), int(b.open_ended)))
    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":"),
                      default=_json_default).encode("utf-8")
    out.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(out)


def save_checkpoint(model, path):
    Path(path).write_bytes(encode_checkpoint(model))


def expected_size(model):
    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":"),
                      default=_json_default).encode("utf-8")
    return PREFIX.size + 8 * model.parameter_count() + BINNING.size + 4 + len(meta)


def decode_checkpoint(buf):
    buf = bytes(buf)
    if len(buf) < PREFIX.size:
        raise FormatError(f"checkpoint too short ({len(buf)} bytes)", len(buf))
    magic, version, *dims, eps, momentum, count = PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    dims = ModelDims(*dims)
    offset = PREFIX.size
    # binning follows the tensors; peek at it to build the model skeleton
    bin_at = offset + 8 * count
    if len(buf) < bin_at + BINNING.size + 4:
        raise FormatError("truncated checkpoint: tensors or binning missing", len(buf))
    lo, hi, num_bins, angular, open_ended = BINNING.unpack_from(buf, bin_at)
    binning = PoseBinning(lo, hi, num_bins, angular=bool(angular), open_ended=bool(open_ended))
    if binning.num_cells != dims.num_cells:
        raise FormatError(
            f"binning has {binning.num_cells} cells, dims record says {dims.num_cells}", bin_at)
    model = FattenModel.create(binning, dims.feature_dim, dims.num_classes,
                               pose_hidden=dims.pose_hidden,
                               appearance_hidden=dims.appearance_hidden,
                               appearance_dim=dims.appearance_dim,
                               decoder_hidden=dims.decoder_hidden)
    tensors = model.tensors()
    needed = sum(v.size for v in tensors.values())
    if needed != count:
        raise DimensionError(
            f"checkpoint holds {count} values but its dimensions imply {needed}")
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    pos = 0
    for arr in tensors.values():
        arr[...] = values[pos:pos + arr.size].reshape(arr.shape)
        pos += arr.size
    for comp in FattenModel.COMPONENTS:
        for _, layer in getattr(model, comp).layers:
            if hasattr(layer, "eps"):
                layer.eps, layer.momentum = eps, momentum
    at = bin_at + BINNING.size
    (length,) = struct.unpack_from("<I", buf, at)
    if at + 4 + length != len(buf):
        raise FormatError(
            f"metadata trailer announces {length} bytes, file holds {len(buf) - at - 4}", at)
    try:
        model.metadata = json.loads(buf[at + 4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed metadata trailer: {exc}", at + 4) from None
    return model


def load_checkpoint(path, feature_dim=None):
    """Read a checkpoint; ``feature_dim`` (if given) must match the model."""
    model = decode_checkpoint(Path(path).read_bytes())
    if feature_dim is not None and feature_dim != model.dims.feature_dim:
        raise DimensionError(
            f"checkpoint {path} expects feature_dim {model.dims.feature_dim}, "
            f"data has {feature_dim}")
    return model
