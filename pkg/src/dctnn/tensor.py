"""Dense N-mode tensor algebra on numpy arrays.

A tensor is a C-ordered ``float64`` ndarray, so the linearization is
last-mode-fastest. The mode-``m`` unfolding keeps that convention for the
columns: remaining modes in increasing order, the last one varying fastest.
"""
from __future__ import annotations

import json
import struct
from functools import reduce
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"DCTN"


def as_tensor(data) -> np.ndarray:
    t = np.asarray(data, dtype=np.float64)
    if t.ndim == 0:
        raise ValueError("a tensor needs at least one mode")
    t = np.ascontiguousarray(t)
    if any(d < 1 for d in t.shape):
        raise ValueError(f"all mode dimensions must be >= 1, got {t.shape}")
    return t


def _check_mode(ndim: int, mode: int) -> None:
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} out of range for a {ndim}-mode tensor")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``(D_mode, prod of the other dims)``."""
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), mode)
    rest = shape[:mode] + shape[mode + 1:]
    m = np.asarray(m)
    if m.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix of shape {m.shape} cannot fold into {shape} on mode {mode}")
    return np.ascontiguousarray(np.moveaxis(m.reshape((shape[mode],) + rest), 0, mode))


def mode_product(t: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    """``t ×_mode a``: multiply every mode-``mode`` fiber of ``t`` by ``a``."""
    t = np.asarray(t)
    a = np.asarray(a)
    _check_mode(t.ndim, mode)
    if a.ndim != 2 or a.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix of shape {a.shape} does not match mode {mode} of size {t.shape[mode]}"
        )
    out = np.tensordot(a, t, axes=(1, mode))
    return np.ascontiguousarray(np.moveaxis(out, 0, mode))


def multi_mode_product(t: np.ndarray, mats: Sequence[np.ndarray | None], transpose: bool = False,
                       offset: int = 0) -> np.ndarray:
    """Apply ``mats[k]`` on mode ``offset + k``; ``None`` entries are skipped.

    ``offset=1`` treats the leading axis as a sample axis.
    """
    for k, a in enumerate(mats):
        if a is None:
            continue
        t = mode_product(t, a.T if transpose else a, offset + k)
    return t


def contract(w: np.ndarray, h: np.ndarray, n_in_modes: int | None = None) -> np.ndarray:
    """Contract the trailing ``n_in_modes`` modes of ``w`` against all modes of ``h``."""
    w = np.asarray(w)
    h = np.asarray(h)
    if n_in_modes is None:
        n_in_modes = h.ndim
    if n_in_modes != h.ndim or n_in_modes > w.ndim:
        raise ValueError(f"cannot contract {n_in_modes} modes of {w.shape} with {h.shape}")
    if w.shape[w.ndim - n_in_modes:] != h.shape:
        raise ValueError(f"trailing modes of weight {w.shape} do not match input {h.shape}")
    return np.tensordot(w, h, axes=n_in_modes)


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(t))))


def outer_rank1(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product ``v_1 ∘ v_2 ∘ ... ∘ v_M``."""
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if any(v.size == 0 for v in vecs):
        raise ValueError("vectors must be nonempty")
    return reduce(np.multiply.outer, vecs)


# -- serialization -------------------------------------------------------------

def write_tensor(f: BinaryIO, t: np.ndarray) -> None:
    """Append one record: magic, mode count, shape, little-endian float64 data."""
    t = np.asarray(t, dtype="<f8")
    f.write(MAGIC)
    f.write(struct.pack("<I", t.ndim))
    f.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    f.write(np.ascontiguousarray(t).tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad magic bytes {magic!r}")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    buf = f.read(8 * count)
    if len(buf) != 8 * count:
        raise ValueError("truncated tensor record")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


def save_tensors(path, tensors: Sequence[np.ndarray]) -> None:
    with open(path, "wb") as f:
        for t in tensors:
            write_tensor(f, t)


def load_tensors(path) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as f:
        while f.peek(1) if hasattr(f, "peek") else False:
            out.append(read_tensor(f))
    return out


def save_tensor(path, t: np.ndarray) -> None:
    save_tensors(path, [t])


def load_tensor(path) -> np.ndarray:
    (t,) = load_tensors(path)
    return t


def to_json(t: np.ndarray) -> str:
    return json.dumps(np.asarray(t, dtype=np.float64).tolist())


def from_json(s: str) -> np.ndarray:
    return as_tensor(json.loads(s))
