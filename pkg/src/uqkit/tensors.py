"""UBT binary tensor files.

Layout (little-endian throughout):

    bytes 0-3   magic "UBT1"
    byte  4     dtype code: 1 = f32, 2 = f64, 3 = i32
    byte  5     rank r, 0-8
    bytes 6-7   zero padding
    next        r unsigned 64-bit dims
    rest        row-major payload, exactly prod(dims) elements

Float tensors must be finite unless explicitly flagged as raw-score
tensors; save_tensor enforces this at write time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import TensorFormatError

MAGIC = b"UBT1"
MAX_RANK = 8

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4")}
_KIND_TO_CODE = {"f32": 1, "f64": 2, "i32": 3}
_CODE_TO_KIND = {v: k for k, v in _KIND_TO_CODE.items()}


def _canonical_array(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == np.float32:
        dt = "<f4"
    elif arr.dtype == np.float64:
        dt = "<f8"
    elif np.issubdtype(arr.dtype, np.integer):
        dt = "<i4"
    elif np.issubdtype(arr.dtype, np.floating):
        dt = "<f8"
    else:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    out = np.asarray(arr, dtype=np.dtype(dt))
    # ascontiguousarray would promote rank 0 to rank 1; preserve the rank.
    return out if out.flags.c_contiguous else np.ascontiguousarray(out)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Dense row-major array with an explicit UBT dtype.

    raw_scores exempts the tensor from the finiteness check on save;
    probabilities and embeddings must stay finite.
    """

    array: np.ndarray
    raw_scores: bool = False

    def __post_init__(self):
        object.__setattr__(self, "array", _canonical_array(self.array))
        if self.array.ndim > MAX_RANK:
            raise TensorFormatError(f"rank {self.array.ndim} exceeds maximum {MAX_RANK}")

    @property
    def dtype(self) -> str:
        return {"float32": "f32", "float64": "f64", "int32": "i32"}[self.array.dtype.name]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.array.shape

    def validate_finite(self) -> None:
        if self.dtype in ("f32", "f64") and not self.raw_scores:
            if not np.all(np.isfinite(self.array)):
                raise TensorFormatError("non-finite value in a finiteness-required tensor")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.array.dtype == other.array.dtype
            and self.array.shape == other.array.shape
            and self.array.tobytes() == other.array.tobytes()
        )


def save_tensor(t: Tensor | np.ndarray, path, *, raw_scores: bool = False) -> None:
    """Write a tensor as a UBT file; round-trips bit-exactly through load_tensor."""
    if not isinstance(t, Tensor):
        t = Tensor(t, raw_scores=raw_scores)
    t.validate_finite()
    arr = t.array
    header = MAGIC + struct.pack("<BBH", _KIND_TO_CODE[t.dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(arr.tobytes(order="C"))


def load_tensor(path) -> Tensor:
    """Read and validate a UBT file. Rejects bad magic, unknown dtypes,
    and any mismatch between the declared dims and the payload size."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise TensorFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {blob[:4]!r}")
    code, rank, pad = struct.unpack("<BBH", blob[4:8])
    if code not in _CODE_TO_DTYPE:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    if rank > MAX_RANK:
        raise TensorFormatError(f"{path}: rank {rank} exceeds maximum {MAX_RANK}")
    if pad != 0:
        raise TensorFormatError(f"{path}: nonzero header padding")
    offset = 8 + 8 * rank
    if len(blob) < offset:
        raise TensorFormatError(f"{path}: truncated dims block")
    dims = struct.unpack(f"<{rank}Q", blob[8:offset]) if rank else ()
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise TensorFormatError(
            f"{path}: size mismatch, dims {list(dims)} imply {expected - offset} payload "
            f"bytes but file has {len(blob) - offset}"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(dims)
    return Tensor(arr.copy())
