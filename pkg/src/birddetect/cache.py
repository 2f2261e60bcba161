"""Binary on-disk container for extracted features.

Layout (all integers little-endian):

    magic      4 bytes  b"BDFC"
    version    u32      currently 1
    id_len     u32
    id         id_len bytes, UTF-8 clip id
    mbe shape  3 x u32  (T, bands, 1)
    dom shape  3 x u32  (T, K, 2)
    payload    float64 LE, row-major: mbe then domfreq

Reads reproduce writes bit-for-bit; any size or version disagreement is an
error rather than a best-effort parse.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .features import FeaturePair

__all__ = ["CacheError", "write_feature_cache", "read_feature_cache", "read_feature_cache_entry"]

CACHE_MAGIC = b"BDFC"
CACHE_VERSION = 1
_HEAD = struct.Struct("<4sII")
_SHAPE = struct.Struct("<III")


class CacheError(ValueError):
    """Raised when a cache file cannot be written or read back faithfully."""


def write_feature_cache(pair: FeaturePair, path: str | Path, clip_id: str = "") -> None:
    """Serialize one FeaturePair; read_feature_cache inverts this exactly."""
    mbe = np.ascontiguousarray(pair.mbe, dtype="<f8")
    dom = np.ascontiguousarray(pair.domfreq, dtype="<f8")
    ident = clip_id.encode("utf-8")
    parts = [
        _HEAD.pack(CACHE_MAGIC, CACHE_VERSION, len(ident)),
        ident,
        _SHAPE.pack(mbe.shape[0], mbe.shape[1], 1),
        _SHAPE.pack(dom.shape[0], dom.shape[1], dom.shape[2]),
        mbe.tobytes(),
        dom.tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_feature_cache_entry(path: str | Path) -> tuple[str, FeaturePair]:
    """Read a cache file back as (clip_id, FeaturePair)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise CacheError(f"{path}: too short for a cache header ({len(raw)} bytes)")
    magic, version, id_len = _HEAD.unpack_from(raw, 0)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: cache version {version}, this reader expects {CACHE_VERSION}")
    pos = _HEAD.size
    if len(raw) < pos + id_len + 2 * _SHAPE.size:
        raise CacheError(f"{path}: truncated header")
    clip_id = raw[pos : pos + id_len].decode("utf-8")
    pos += id_len
    mbe_shape = _SHAPE.unpack_from(raw, pos)
    pos += _SHAPE.size
    dom_shape = _SHAPE.unpack_from(raw, pos)
    pos += _SHAPE.size

    if mbe_shape[2] != 1:
        raise CacheError(f"{path}: mbe channel count must be 1, header says {mbe_shape[2]}")
    if mbe_shape[0] != dom_shape[0]:
        raise CacheError(
            f"{path}: frame counts disagree in header: mbe {mbe_shape[0]}, domfreq {dom_shape[0]}"
        )

    n_mbe = mbe_shape[0] * mbe_shape[1]
    n_dom = dom_shape[0] * dom_shape[1] * dom_shape[2]
    expected = (n_mbe + n_dom) * 8
    actual = len(raw) - pos
    if actual != expected:
        kind = "truncated" if actual < expected else "oversized"
        raise CacheError(f"{path}: {kind} payload: expected {expected} bytes, got {actual}")

    mbe = np.frombuffer(raw, dtype="<f8", count=n_mbe, offset=pos).reshape(mbe_shape[0], mbe_shape[1])
    pos += n_mbe * 8
    dom = np.frombuffer(raw, dtype="<f8", count=n_dom, offset=pos).reshape(dom_shape)
    return clip_id, FeaturePair(mbe=mbe.copy(), domfreq=dom.copy())


def read_feature_cache(path: str | Path) -> FeaturePair:
    """Read a cache file back as a FeaturePair, dropping the stored id."""
    return read_feature_cache_entry(path)[1]
