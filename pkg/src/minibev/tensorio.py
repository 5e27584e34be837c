"""Binary tensor and checkpoint file formats.

Two little-endian container formats are used across the pipeline:

- Tensor file, magic ``OCBT``: rank as u32, extents as u64 each, payload
  as float32.  One tensor per file; used for feature-map sidecars and raw
  BEV dumps.
- Checkpoint file, magic ``OCBW``: version u32, then a flat sequence of
  records until EOF, each record being name length (u32), UTF-8 name,
  rank (u32), extents (u64 each), payload as float64.  Round-trips are
  bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

TENSOR_MAGIC = b"OCBT"
CHECKPOINT_MAGIC = b"OCBW"
CHECKPOINT_VERSION = 1


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.astype("<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: bad tensor magic {magic!r}")
        (rank,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated tensor payload")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save_checkpoint(path, params: dict[str, Tensor | np.ndarray]) -> None:
    """Write named arrays in sorted-name order for reproducible bytes."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name in sorted(params):
            arr = params[name]
            data = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
            count = int(np.prod(shape)) if rank else 1
            payload = f.read(8 * count)
            if len(payload) != 8 * count:
                raise ValueError(f"{path}: truncated record for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return out
