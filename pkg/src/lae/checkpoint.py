"""Checkpoint persistence.

Layout: a UTF-8 JSON header (format version, architecture lines, config
snapshot, has_precision flag, creation metadata) preceded by its u32 LE
byte length, then a binary blob:

    b"LAE1" | u64 LE W_s | W_s f64 LE means [| W_s f64 LE precisions]

Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import arch_to_lines, config_to_dict, parse_arch_lines
from .posterior import DiagGaussianPosterior
from .trainer import TrainConfig

MAGIC = b"LAE1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net, mean, precision=None, config=None, meta=None):
    """Write a point estimate (precision=None) or a posterior."""
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    if mean.shape != (net.n_params,):
        raise CheckpointError(
            f"mean has {mean.size} values, network has {net.n_params}")
    if precision is not None:
        precision = np.ascontiguousarray(precision, dtype=np.float64)
        if precision.shape != mean.shape:
            raise CheckpointError("precision length differs from mean")
        if not np.all(precision > 0):
            raise CheckpointError("precision values must be positive")
    header = {
        "format_version": FORMAT_VERSION,
        "arch": arch_to_lines(net),
        "config": config_to_dict(config) if config is not None else None,
        "has_precision": precision is not None,
        # free-form provenance note; deliberately not a timestamp so that
        # identical runs produce byte-identical checkpoints
        "created": meta if meta is not None else "lae-checkpoint",
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(MAGIC)
        f.write(struct.pack("<Q", mean.size))
        f.write(mean.tobytes())
        if precision is not None:
            f.write(precision.tobytes())


def load_checkpoint(path):
    """Returns (net, mean, precision-or-None, header dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise CheckpointError("truncated checkpoint header length")
    (hlen,), pos = struct.unpack("<I", raw[:4]), 4
    if len(raw) < pos + hlen + 12:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {header.get('format_version')!r}")
    if raw[pos:pos + 4] != MAGIC:
        raise CheckpointError(f"bad blob magic {raw[pos:pos + 4]!r}")
    pos += 4
    n, = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    want = 8 * n * (2 if header["has_precision"] else 1)
    if len(raw) - pos != want:
        raise CheckpointError(
            f"blob payload is {len(raw) - pos} bytes, expected {want}")
    mean = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).copy()
    precision = None
    if header["has_precision"]:
        precision = np.frombuffer(raw, dtype="<f8", count=n,
                                  offset=pos + 8 * n).copy()
        if not np.all(precision > 0):
            raise CheckpointError("non-positive precision in checkpoint")
    net = _net_from_header(header)
    if net.n_params != n:
        raise CheckpointError(
            f"checkpoint holds {n} parameters, architecture needs {net.n_params}")
    return net, mean, precision, header


def _net_from_header(header):
    return parse_arch_lines(header["arch"])


def load_posterior(path) -> tuple:
    """Like load_checkpoint but requires precisions to be present."""
    net, mean, precision, header = load_checkpoint(path)
    if precision is None:
        raise CheckpointError(
            "checkpoint stores a point estimate; posterior required")
    post = DiagGaussianPosterior(mean=mean, precision=precision,
                                 mode="checkpoint")
    return net, post, header


def config_from_header(header) -> TrainConfig:
    snap = header.get("config")
    return TrainConfig(**snap) if snap else TrainConfig()
