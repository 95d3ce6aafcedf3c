"""Binary dataset files (``.fatn``) and CSV import of external features.

Layout, little-endian::

    header   magic "FATN" | version u16 | feature_dim u32 | num_pose_bins u16
             | num_classes u16 | record_count u64 | flags u16          (24 bytes)
    record   class_label u32 | object_id u64 | pose_value f64 | pose_bin u16
             | feature_dim x f64                              (22 + 8*D bytes)
    appendix for each flag bit 0..1 that is set, in bit order:
             length u32 | UTF-8 JSON

Flag bits: 0 = manifold parameters appendix, 1 = binning appendix,
2 = test split (no appendix).  Files without a binning appendix use
``num_pose_bins`` equal angular cells over [0, 360).
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .binning import PoseBinning
from .errors import FormatError
from .manifold import ManifoldParams, SyntheticDataset, build_manifold

MAGIC = b"FATN"
VERSION = 1
HEADER = struct.Struct("<4sHIHHQH")
FLAG_MANIFOLD = 1
FLAG_BINNING = 2
FLAG_TEST_SPLIT = 4


def record_dtype(feature_dim):
    return np.dtype([("class_label", "<u4"), ("object_id", "<u8"), ("pose_value", "<f8"),
                     ("pose_bin", "<u2"), ("feature", "<f8", (feature_dim,))])


def record_size(feature_dim):
    return record_dtype(feature_dim).itemsize


def _appendix(obj):
    data = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(data)) + data


def _default_binning(num_bins):
    return PoseBinning(0.0, 360.0, num_bins, angular=True)


def encode_dataset(dataset):
    """Serialize to bytes."""
    n, d = dataset.features.shape
    flags = 0
    tail = b""
    if dataset.spec is not None:
        flags |= FLAG_MANIFOLD
        tail += _appendix(dataset.spec.to_dict())
    if dataset.binning != _default_binning(dataset.binning.num_cells):
        flags |= FLAG_BINNING
        tail += _appendix(dataset.binning.to_dict())
    if dataset.split == "test":
        flags |= FLAG_TEST_SPLIT
    header = HEADER.pack(MAGIC, VERSION, d, dataset.binning.num_cells, dataset.num_classes,
                         n, flags)
    rec = np.zeros(n, dtype=record_dtype(d))
    rec["class_label"] = dataset.class_labels
    rec["object_id"] = dataset.object_ids
    rec["pose_value"] = dataset.pose_values
    rec["pose_bin"] = dataset.pose_bins
    rec["feature"] = dataset.features
    return header + rec.tobytes() + tail


def write_dataset(dataset, path):
    Path(path).write_bytes(encode_dataset(dataset))


def _read_appendix(buf, offset, what):
    if offset + 4 > len(buf):
        raise FormatError(f"truncated {what} appendix length", offset)
    (length,) = struct.unpack_from("<I", buf, offset)
    start = offset + 4
    if start + length > len(buf):
        raise FormatError(f"truncated {what} appendix: need {length} bytes", start)
    try:
        obj = json.loads(buf[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed {what} appendix: {exc}", start) from None
    return obj, start + length


def decode_dataset(buf):
    buf = bytes(buf)
    if len(buf) < HEADER.size:
        raise FormatError(f"file too short for a header ({len(buf)} bytes)", len(buf))
    magic, version, d, n_bins, n_classes, count, flags = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    if d == 0:
        raise FormatError("feature_dim must be positive", 6)
    dtype = record_dtype(d)
    body_end = HEADER.size + count * dtype.itemsize
    if len(buf) < body_end:
        full = (len(buf) - HEADER.size) // dtype.itemsize
        raise FormatError(
            f"truncated records: header announces {count}, file holds {full}", len(buf))
    rec = np.frombuffer(buf, dtype=dtype, count=count, offset=HEADER.size)
    offset = body_end
    spec = None
    binning = _default_binning(n_bins)
    if flags & FLAG_MANIFOLD:
        params, offset_next = _read_appendix(buf, offset, "manifold")
        try:
            spec = build_manifold(ManifoldParams(**params))
        except TypeError as exc:
            raise FormatError(f"bad manifold appendix: {exc}", offset + 4) from None
        if spec.params.feature_dim != d:
            raise FormatError(
                f"manifold feature_dim {spec.params.feature_dim} disagrees with header {d}",
                offset + 4)
        offset = offset_next
    if flags & FLAG_BINNING:
        fields, offset_next = _read_appendix(buf, offset, "binning")
        try:
            binning = PoseBinning(**fields)
        except TypeError as exc:
            raise FormatError(f"bad binning appendix: {exc}", offset + 4) from None
        offset = offset_next
    if binning.num_cells != n_bins:
        raise FormatError(
            f"binning has {binning.num_cells} cells but header says {n_bins}", 10)
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} unexpected trailing bytes", offset)
    for field, limit in (("pose_bin", n_bins), ("class_label", n_classes)):
        bad = np.flatnonzero(rec[field] >= limit)
        if bad.size:
            raise FormatError(
                f"record {bad[0]}: {field} {rec[field][bad[0]]} out of range [0, {limit})",
                HEADER.size + bad[0] * dtype.itemsize)
    split = "test" if flags & FLAG_TEST_SPLIT else "train"
    return SyntheticDataset(
        np.array(rec["feature"]), np.array(rec["pose_value"]),
        rec["pose_bin"].astype(np.int64), rec["class_label"].astype(np.int64),
        rec["object_id"].astype(np.int64), binning, int(n_classes), split, spec)


def read_dataset(path):
    return decode_dataset(Path(path).read_bytes())


def import_csv(path, binning=None, split="train", num_classes=None):
    """Read ``class,object,pose,f0,f1,...`` rows of externally extracted features."""
    binning = binning or _default_binning(12)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV file", 0) from None
        names = [h.strip().lower() for h in header[:3]]
        if names != ["class", "object", "pose"] or len(header) < 4:
            raise FormatError(
                f"{path}: header must start with class,object,pose and list feature columns",
                0)
        d = len(header) - 3
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 3:
                raise FormatError(f"{path}:{lineno}: expected {d + 3} columns, got {len(row)}")
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]),
                             [float(v) for v in row[3:]]))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    labels = np.array([r[0] for r in rows], dtype=np.int64)
    if labels.min() < 0:
        raise FormatError(f"{path}: class labels must be non-negative")
    poses = np.array([r[2] for r in rows])
    k = int(labels.max()) + 1 if num_classes is None else int(num_classes)
    return SyntheticDataset(
        np.array([r[3] for r in rows]), poses, binning.encode_many(poses), labels,
        np.array([r[1] for r in rows], dtype=np.int64), binning, k, split, None)
