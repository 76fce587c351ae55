"""Dense tensors, trainable parameters and the binary tensor file format.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. On disk they
are stored as::

    b"SDT1" | u32 rank | rank * u32 extents | row-major f32 payload

with every integer and float little-endian. Storage is single precision,
compute is double precision, so a save/load round trip rounds to f32.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, DimensionError, NumericalError

Tensor = np.ndarray

MAGIC = b"SDT1"
_U32 = struct.Struct("<I")


def as_tensor(x, copy=False) -> Tensor:
    """Return ``x`` as a C-contiguous float64 array."""
    if copy:
        arr = np.array(x, dtype=np.float64, order="C")
    else:
        arr = np.ascontiguousarray(x, dtype=np.float64)
    if any(d <= 0 for d in arr.shape):
        raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
    return arr


@dataclass
class Param:
    """A trainable tensor and its accumulated gradient.

    Gradients add up across backward passes until :meth:`zero_grad` is called.
    """

    value: Tensor
    grad: Tensor = field(default=None)

    def __post_init__(self):
        self.value = as_tensor(self.value, copy=True)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.value.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {self.value.shape}")
        self.grad += g

    def zero_grad(self):
        self.grad.fill(0.0)


def tensor_to_bytes(x) -> bytes:
    x = np.asarray(x, dtype=np.float64)
    payload = x.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NumericalError("tensor contains values that are not finite in f32 storage")
    head = [MAGIC, _U32.pack(x.ndim)]
    head += [_U32.pack(d) for d in x.shape]
    return b"".join(head) + payload.tobytes(order="C")


def tensor_from_bytes(buf, offset=0):
    """Decode one tensor starting at ``offset``; return ``(tensor, next_offset)``."""
    mv = memoryview(buf)
    if len(mv) - offset < 8 or bytes(mv[offset:offset + 4]) != MAGIC:
        raise CorruptionError(f"missing tensor magic at byte {offset}")
    (rank,) = _U32.unpack_from(mv, offset + 4)
    pos = offset + 8
    if len(mv) - pos < 4 * rank:
        raise CorruptionError("truncated tensor header")
    shape = tuple(_U32.unpack_from(mv, pos + 4 * i)[0] for i in range(rank))
    pos += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    nbytes = 4 * count
    if len(mv) - pos < nbytes:
        raise CorruptionError(f"truncated tensor payload: need {nbytes} bytes, have {len(mv) - pos}")
    data = np.frombuffer(mv[pos:pos + nbytes], dtype="<f4").astype(np.float64)
    return data.reshape(shape), pos + nbytes


def write_tensor(fh, x):
    data = tensor_to_bytes(x)
    fh.write(data)
    return len(data)


def read_tensor(fh) -> Tensor:
    head = fh.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise CorruptionError("missing tensor magic")
    (rank,) = _U32.unpack_from(head, 4)
    dims = fh.read(4 * rank)
    shape = struct.unpack(f"<{rank}I", dims) if rank else ()
    count = int(np.prod(shape, dtype=np.int64))
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise CorruptionError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)


def save_tensor(path, x):
    with open(path, "wb") as fh:
        write_tensor(fh, x)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def pack_tensors(named):
    """Concatenate named tensors into one blob.

    Returns ``(blob, entries)`` where ``entries`` lists name, shape, offset
    and byte length for each tensor, in insertion order.
    """
    out = io.BytesIO()
    entries = []
    for name, x in named.items():
        offset = out.tell()
        n = write_tensor(out, x)
        entries.append({"name": name, "shape": list(np.shape(x)), "offset": offset, "nbytes": n})
    return out.getvalue(), entries


def unpack_tensors(blob, entries):
    result = {}
    for e in entries:
        x, end = tensor_from_bytes(blob, e["offset"])
        if list(x.shape) != list(e["shape"]) or end - e["offset"] != e["nbytes"]:
            raise CorruptionError(f"tensor {e['name']!r} does not match its manifest entry")
        result[e["name"]] = x
    return result
