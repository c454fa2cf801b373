"""Writer for the UBT tensor wire format.

Kept self-contained on purpose: the binary layout is the contract between
this exporter and its consumers, so it is reproduced here rather than
imported from one of them. Little-endian: magic "UBT1", dtype code
(1=f32, 2=f64, 3=i32), rank, two zero pad bytes, u64 dims, row-major
payload.
"""

from __future__ import annotations

import struct

import numpy as np

_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i4"): 3}


def write_ubt(array: np.ndarray, path) -> None:
    arr = np.asarray(array)
    if arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype == np.float64:
        arr = arr.astype("<f8", copy=False)
    elif np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype("<i4")
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise ValueError("refusing to export non-finite values")
    arr = np.ascontiguousarray(arr) if arr.ndim else arr
    header = b"UBT1" + struct.pack("<BBH", _CODES[arr.dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(arr.tobytes(order="C"))
