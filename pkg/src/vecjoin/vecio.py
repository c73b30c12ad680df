"""Readers and writers for the fvecs / bvecs corpus formats.

Each record is a little-endian int32 dimension followed by that many
components (float32 for fvecs, uint8 for bvecs). All records in a file must
share one dimension.
"""
from __future__ import annotations

import os

import numpy as np

from .core import VectorStore
from .errors import FormatError


def _parse(raw: bytes, item: np.dtype, what: str) -> np.ndarray:
    if not raw:
        return np.zeros((0, 0), dtype=item)
    if len(raw) < 4:
        raise FormatError(f"{what}: truncated record header")
    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise FormatError(f"{what}: non-positive dimension {dim}")
    rec = 4 + dim * item.itemsize
    if len(raw) % rec:
        raise FormatError(f"{what}: {len(raw)} bytes is not a whole number of {rec}-byte records")
    n = len(raw) // rec
    table = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    dims = table[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != dim)
    if bad.size:
        raise FormatError(f"{what}: record {int(bad[0])} has dimension {int(dims[bad[0]])}, expected {dim}")
    return table[:, 4:].copy().view(item).reshape(n, dim)


def load_fvecs(path) -> VectorStore:
    with open(path, "rb") as f:
        arr = _parse(f.read(), np.dtype("<f4"), os.fspath(path))
    if arr.size == 0:
        raise FormatError(f"{os.fspath(path)}: empty fvecs file")
    return VectorStore(arr)


def load_bvecs(path) -> VectorStore:
    with open(path, "rb") as f:
        arr = _parse(f.read(), np.dtype("u1"), os.fspath(path))
    if arr.size == 0:
        raise FormatError(f"{os.fspath(path)}: empty bvecs file")
    return VectorStore(arr.astype(np.float32))


def load_ivecs(path) -> np.ndarray:
    with open(path, "rb") as f:
        return _parse(f.read(), np.dtype("<i4"), os.fspath(path))


def _dump(arr: np.ndarray, item: str) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=item)
    n, dim = arr.shape
    out = np.empty((n, 4 + dim * arr.dtype.itemsize), dtype=np.uint8)
    out[:, :4] = np.full((n, 1), dim, dtype="<i4").view(np.uint8)
    out[:, 4:] = arr.view(np.uint8).reshape(n, -1)
    return out.tobytes()


def save_fvecs(path, store) -> None:
    data = store.data if isinstance(store, VectorStore) else np.asarray(store)
    with open(path, "wb") as f:
        f.write(_dump(data, "<f4"))


def save_bvecs(path, store) -> None:
    data = store.data if isinstance(store, VectorStore) else np.asarray(store)
    if data.size and (data.min() < 0 or data.max() > 255 or not np.array_equal(data, np.round(data))):
        raise ValueError("bvecs holds integers in [0, 255] only")
    with open(path, "wb") as f:
        f.write(_dump(data, "u1"))


def save_ivecs(path, arr) -> None:
    with open(path, "wb") as f:
        f.write(_dump(np.asarray(arr), "<i4"))


def load_vectors(path) -> VectorStore:
    """Dispatch on the file extension (.fvecs or .bvecs)."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".bvecs":
        return load_bvecs(path)
    return load_fvecs(path)
