"""Binary parameter files.

Layout: ``b"PRN1"`` then, per tensor and until EOF,
``u32 name_len | name (utf-8) | u32 ndim | u64 dims[ndim] | f64 data``,
all little-endian, data in row-major order.
"""
import struct

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"PRN1"


def dumps(tensors):
    parts = [MAGIC]
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(buf):
    if buf[:4] != MAGIC:
        raise DataError("not a PRN1 checkpoint (bad magic)")
    out = {}
    pos = 4
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            count = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            out[name] = arr.reshape(dims)
    except (struct.error, ValueError) as e:
        raise DataError(f"truncated checkpoint: {e}") from None
    return out


def save(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
