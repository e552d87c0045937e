"""CRBM binary container: named, typed sections in little-endian byte order.

Layout::

    magic        4 bytes   b"CRBM"
    version      u32
    n_sections   u32
    n_sections times:
        name_len u32, name (UTF-8, name_len bytes)
        type     u8        1 = array, 2 = text, 3 = sparse CSR
        payload  (below)

    array : dtype code u8 (1 f64, 2 i64, 3 u32, 4 u8), ndim u32, ndim x u64 shape, raw data (C order)
    text  : u64 byte length, UTF-8 bytes
    sparse: u64 rows, u64 cols, then three arrays (data f64, indices i64, indptr i64)

Section names are unique; a sparse matrix round-trips with its stored
entries in CSR order, so values and explicit zeros are preserved bit for bit.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MAGIC = b"CRBM"
VERSION = 1

_ARRAY, _TEXT, _SPARSE = 1, 2, 3
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<u4"), 4: np.dtype("u1")}
_CODES = {v.str: k for k, v in _DTYPES.items()}


class StoreError(ValueError):
    pass


def _normalise_array(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype.kind == "f":
        return a.astype("<f8", copy=False)
    if a.dtype.kind == "b":
        return a.astype("u1")
    if a.dtype == np.uint32:
        return a.astype("<u4", copy=False)
    if a.dtype == np.uint8:
        return a
    if a.dtype.kind in "iu":
        return a.astype("<i8", copy=False)
    raise StoreError(f"unsupported dtype {a.dtype}")


def _pack_array(a: np.ndarray) -> bytes:
    a = _normalise_array(a)
    code = _CODES[a.dtype.str]
    head = struct.pack("<BI", code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def _unpack_array(buf: memoryview, pos: int) -> tuple[np.ndarray, int]:
    code, ndim = struct.unpack_from("<BI", buf, pos)
    pos += 5
    shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    if code not in _DTYPES:
        raise StoreError(f"unknown dtype code {code}")
    dt = _DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    a = np.frombuffer(bytes(buf[pos:pos + n]), dtype=dt).reshape(shape)
    return a.copy(), pos + n


def encode(sections: dict[str, object]) -> bytes:
    """Serialise ``{name: ndarray | str | scipy sparse}`` preserving insertion order."""
    out = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, value in sections.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        if isinstance(value, str):
            text = value.encode("utf-8")
            out.append(struct.pack("<BQ", _TEXT, len(text)) + text)
        elif sp.issparse(value):
            m = sp.csr_matrix(value)
            out.append(struct.pack("<BQQ", _SPARSE, *m.shape))
            out.append(_pack_array(m.data.astype("<f8")))
            out.append(_pack_array(m.indices.astype("<i8")))
            out.append(_pack_array(m.indptr.astype("<i8")))
        else:
            out.append(struct.pack("<B", _ARRAY) + _pack_array(np.asarray(value)))
    return b"".join(out)


def decode(blob: bytes) -> dict[str, object]:
    buf = memoryview(blob)
    if bytes(buf[:4]) != MAGIC:
        raise StoreError("not a CRBM container")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise StoreError(f"unsupported container version {version}")
    pos = 12
    out: dict[str, object] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = bytes(buf[pos:pos + n]).decode("utf-8")
        pos += n
        if name in out:
            raise StoreError(f"duplicate section {name!r}")
        (kind,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        if kind == _TEXT:
            (n,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            out[name] = bytes(buf[pos:pos + n]).decode("utf-8")
            pos += n
        elif kind == _SPARSE:
            rows, cols = struct.unpack_from("<QQ", buf, pos)
            pos += 16
            data, pos = _unpack_array(buf, pos)
            indices, pos = _unpack_array(buf, pos)
            indptr, pos = _unpack_array(buf, pos)
            out[name] = sp.csr_matrix((data, indices, indptr), shape=(rows, cols))
        elif kind == _ARRAY:
            out[name], pos = _unpack_array(buf, pos)
        else:
            raise StoreError(f"unknown section type {kind} for {name!r}")
    if pos != len(buf):
        raise StoreError("trailing bytes after the last section")
    return out


def write_store(path: str | os.PathLike, sections: dict[str, object]) -> None:
    """Write atomically: the file appears only once complete."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(sections))
    os.replace(tmp, path)


def read_store(path: str | os.PathLike) -> dict[str, object]:
    return decode(Path(path).read_bytes())
