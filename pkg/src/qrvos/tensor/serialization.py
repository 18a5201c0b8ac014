"""Named-tensor container files.

Layout (all integers little-endian)::

    b"QRVOS1"
    u32  entry count
    per entry:
        u32  name length, then UTF-8 name bytes
        u8   dtype code (see DTYPE_CODES)
        u8   ndim, then ndim x u64 extents
        u64  payload length in bytes, then raw little-endian elements
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..errors import LoadError

MAGIC = b"QRVOS1"
DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("<i4"): 4,
    np.dtype("u1"): 5,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


def save_tensors(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
        if le not in DTYPE_CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=le).tobytes()
        bname = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(bname)))
        chunks.append(bname)
        chunks.append(struct.pack("<BB", DTYPE_CODES[le], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_tensors(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from e
    if buf[:6] != MAGIC:
        raise LoadError(f"{path}: bad magic {buf[:6]!r}")
    pos = 6
    try:
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            dtype = CODE_DTYPES[code]
            arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
            pos += nbytes
            out[name] = arr
    except (struct.error, KeyError, ValueError) as e:
        raise LoadError(f"{path}: truncated or corrupt checkpoint ({e})") from e
    return out
