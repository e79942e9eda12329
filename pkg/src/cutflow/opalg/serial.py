"""Binary serialization of operator polynomials.

Format (all integers little-endian):

========  =====  ==========================================
offset    size   field
========  =====  ==========================================
0         4      magic ``b"OPLY"``
4         2      format version (``u16``, currently 1)
6         1      parity (``0`` even, ``1`` odd)
7         1      dtype code (``b"d"`` float64, ``b"D"`` complex128)
8         4      ``n_sites`` (``u32``)
12        2      number of blocks (``u16``)
14        ...    per block: rank (``u16``) then the tensor in
                 row-major order as little-endian 64-bit floats
                 (complex as re/im pairs)
========  =====  ==========================================

Tensors round-trip bit-exactly; the header is validated on load.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .poly import OperatorPolynomial

__all__ = ["dump_polynomial", "load_polynomial", "dumps_polynomial", "loads_polynomial"]

_MAGIC = b"OPLY"
_VERSION = 1
_PARITY_CODE = {"even": 0, "odd": 1}
_PARITY_NAME = {0: "even", 1: "odd"}


def dump_polynomial(h: OperatorPolynomial, dest: str | Path | BinaryIO) -> None:
    """Write a polynomial to a path or binary stream."""
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            dump_polynomial(h, fh)
        return
    complex_blocks = any(np.iscomplexobj(a) for a in h.blocks.values())
    code = b"D" if complex_blocks else b"d"
    dtype = np.dtype("<c16") if complex_blocks else np.dtype("<f8")
    dest.write(_MAGIC)
    dest.write(struct.pack("<HBc I H", _VERSION, _PARITY_CODE[h.parity], code,
                           h.n_sites, len(h.blocks)))
    for rank in sorted(h.blocks):
        dest.write(struct.pack("<H", rank))
        dest.write(np.ascontiguousarray(h.blocks[rank], dtype=dtype).tobytes())


def load_polynomial(src: str | Path | BinaryIO) -> OperatorPolynomial:
    """Read a polynomial written by :func:`dump_polynomial`."""
    if isinstance(src, (str, Path)):
        with open(src, "rb") as fh:
            return load_polynomial(fh)
    magic = src.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}; not an operator polynomial dump")
    version, parity_code, dtype_code, n_sites, n_blocks = struct.unpack(
        "<HBc I H", src.read(10)
    )
    if version != _VERSION:
        raise ValueError(f"unsupported format version {version}")
    if parity_code not in _PARITY_NAME:
        raise ValueError(f"bad parity code {parity_code}")
    if dtype_code == b"d":
        dtype = np.dtype("<f8")
    elif dtype_code == b"D":
        dtype = np.dtype("<c16")
    else:
        raise ValueError(f"bad dtype code {dtype_code!r}")
    blocks: dict[int, np.ndarray] = {}
    for _ in range(n_blocks):
        (rank,) = struct.unpack("<H", src.read(2))
        count = n_sites**rank
        raw = src.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise ValueError("truncated polynomial dump")
        arr = np.frombuffer(raw, dtype=dtype).reshape((n_sites,) * rank)
        blocks[rank] = arr.astype(dtype.newbyteorder("="))
    return OperatorPolynomial(n_sites=n_sites, parity=_PARITY_NAME[parity_code], blocks=blocks)


def dumps_polynomial(h: OperatorPolynomial) -> bytes:
    buf = io.BytesIO()
    dump_polynomial(h, buf)
    return buf.getvalue()


def loads_polynomial(data: bytes) -> OperatorPolynomial:
    return load_polynomial(io.BytesIO(data))
