"""IDX image/label files and seeded dataset splits.

Only the unsigned-byte type code (0x08) is accepted; images use magic
0x00000803 (rank 3) and labels 0x00000801 (rank 1). All integers in the
format are big-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    image_shape: tuple


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte string into a u8 array (images u8[N,H,W],
    labels u8[N])."""
    if len(data) < 4:
        raise IdxFormatError("truncated IDX header")
    magic, = struct.unpack(">I", data[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise IdxFormatError(f"unsupported IDX magic 0x{magic:08x}")
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(data) < header:
        raise IdxFormatError("truncated IDX dimension list")
    dims = struct.unpack(f">{rank}I", data[4:header])
    expected = header + int(np.prod(dims))
    if len(data) != expected:
        raise IdxFormatError(
            f"IDX payload is {len(data) - header} bytes, dims {dims} need "
            f"{expected - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def serialize_idx(arr: np.ndarray) -> bytes:
    """Encode a u8 array back to IDX bytes (bit-exact round trip)."""
    if arr.dtype != np.uint8:
        raise IdxFormatError(f"only uint8 arrays are supported, got {arr.dtype}")
    if arr.ndim == 3:
        magic = IMAGE_MAGIC
    elif arr.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise IdxFormatError(f"unsupported rank {arr.ndim}")
    head = struct.pack(f">I{arr.ndim}I", magic, *arr.shape)
    return head + arr.tobytes()


def load_idx_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_idx(f.read())


def to_float_images(u8_images, channels=1):
    """u8[N,H,W] -> f64[N,C,H,W] in [0,1] (divide by 255)."""
    x = np.asarray(u8_images, dtype=np.float64) / 255.0
    n, h, w = x.shape
    return x.reshape(n, channels, h, w)


def split_train_val(train_x, train_y, val_size=5000, seed=0):
    """Deterministic shuffled split; the last val_size examples of the
    permutation become the validation set."""
    n = len(train_x)
    if not 0 < val_size < n:
        raise ValueError(f"val_size {val_size} incompatible with {n} examples")
    order = np.random.default_rng(seed).permutation(n)
    tr, va = order[:-val_size], order[-val_size:]
    return train_x[tr], train_y[tr], train_x[va], train_y[va]


def load_dataset(train_images, train_labels, test_images, test_labels,
                 val_size=5000, seed=0) -> Dataset:
    """Assemble a Dataset from four IDX paths, with scaled float images."""
    xs = load_idx_file(train_images)
    ys = load_idx_file(train_labels)
    xt = load_idx_file(test_images)
    yt = load_idx_file(test_labels)
    if xs.ndim != 3 or xt.ndim != 3 or ys.ndim != 1 or yt.ndim != 1:
        raise IdxFormatError("images must be rank 3 and labels rank 1")
    if len(xs) != len(ys) or len(xt) != len(yt):
        raise IdxFormatError("image/label counts differ")
    tr_x, tr_y, va_x, va_y = split_train_val(
        to_float_images(xs), ys.astype(np.int64), val_size, seed)
    return Dataset(train_x=tr_x, train_y=tr_y, val_x=va_x, val_y=va_y,
                   test_x=to_float_images(xt), test_y=yt.astype(np.int64),
                   image_shape=(1,) + xs.shape[1:])
