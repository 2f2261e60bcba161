"""WAV decoding and raw-clip utilities.

Only uncompressed RIFF/WAV input is read: 8/16/24-bit integer PCM and
32-bit float, mono or multichannel (averaged down to mono). Decoding is
deterministic and never resamples; clips recorded at the wrong rate are
rejected by :func:`standardize_clip` rather than silently converted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AudioClip",
    "DecodeError",
    "UnsupportedFormatError",
    "decode_wav",
    "standardize_clip",
]

_FORMAT_PCM = 1
_FORMAT_IEEE_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


class DecodeError(ValueError):
    """A WAV file is malformed; the message names the offending field."""


class UnsupportedFormatError(DecodeError):
    """A WAV file is structurally valid but uses an encoding we do not read."""


@dataclass
class AudioClip:
    """Mono audio samples in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must all be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        """Clip length in seconds."""
        return self.samples.size / self.sample_rate


def _parse_fmt_chunk(body: bytes) -> tuple[int, int, int, int]:
    """Return (format_tag, channels, sample_rate, bits_per_sample)."""
    if len(body) < 16:
        raise DecodeError(f"fmt chunk too short: {len(body)} bytes, need at least 16")
    tag, channels, rate, _byte_rate, _block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == _FORMAT_EXTENSIBLE:
        # Real format tag lives in the first two bytes of the SubFormat GUID.
        if len(body) < 40:
            raise DecodeError("fmt chunk declares WAVE_FORMAT_EXTENSIBLE but has no SubFormat field")
        tag = struct.unpack("<H", body[24:26])[0]
    if channels == 0:
        raise DecodeError("fmt chunk declares zero channels")
    if rate == 0:
        raise DecodeError("fmt chunk declares a zero sample rate")
    return tag, channels, rate, bits


def _decode_samples(data: bytes, tag: int, bits: int) -> np.ndarray:
    """Decode one interleaved sample stream to float64 in [-1, 1].

    Integer PCM is scaled by the full negative range (32768 for 16-bit), so
    the most negative code maps exactly to -1.0.
    """
    if tag == _FORMAT_PCM:
        if bits == 8:
            raw = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
            return (raw - 128.0) / 128.0
        if bits == 16:
            raw = np.frombuffer(data, dtype="<i2").astype(np.float64)
            return raw / 32768.0
        if bits == 24:
            b = np.frombuffer(data, dtype=np.uint8)
            if b.size % 3:
                raise DecodeError("data chunk length is not a multiple of the 24-bit sample size")
            b = b.reshape(-1, 3).astype(np.int32)
            val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            val = np.where(val >= 1 << 23, val - (1 << 24), val)
            return val.astype(np.float64) / float(1 << 23)
        raise UnsupportedFormatError(f"unsupported PCM bit depth: {bits}")
    if tag == _FORMAT_IEEE_FLOAT:
        if bits == 32:
            raw = np.frombuffer(data, dtype="<f4").astype(np.float64)
            if not np.all(np.isfinite(raw)):
                raise DecodeError("data chunk contains non-finite float samples")
            # Float files may carry slight overs; clamp to keep the [-1, 1] contract.
            return np.clip(raw, -1.0, 1.0)
        raise UnsupportedFormatError(f"unsupported float bit depth: {bits}")
    raise UnsupportedFormatError(f"unsupported WAV format tag: {tag}")


def decode_wav(path: str | Path) -> AudioClip:
    """Decode a PCM WAV file to a mono :class:`AudioClip`.

    Multichannel input is averaged across channels. The sample rate is
    preserved exactly as read; no resampling happens here.

    Raises :class:`DecodeError` on malformed structure and
    :class:`UnsupportedFormatError` on encodings outside
    8/16/24-bit PCM and 32-bit float.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise DecodeError(f"file too short for a RIFF header: {len(raw)} bytes")
    if raw[0:4] != b"RIFF":
        raise DecodeError(f"missing RIFF magic, found {raw[0:4]!r}")
    if raw[8:12] != b"WAVE":
        raise DecodeError(f"missing WAVE form type, found {raw[8:12]!r}")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise DecodeError(
                f"chunk {cid!r} truncated: declared {size} bytes, file holds {len(body)}"
            )
        if cid == b"fmt ":
            fmt = _parse_fmt_chunk(body)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise DecodeError("missing fmt chunk")
    if data is None:
        raise DecodeError("missing data chunk")

    tag, channels, rate, bits = fmt
    samples = _decode_samples(data, tag, bits)
    if samples.size == 0:
        raise DecodeError("data chunk holds no samples")
    if samples.size % channels:
        raise DecodeError(
            f"data chunk holds {samples.size} samples, not a multiple of {channels} channels"
        )
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=rate, clip_id=path.stem)


def standardize_clip(
    clip: AudioClip, sample_rate: int = 44100, duration_s: float = 10.0
) -> AudioClip:
    """Force a clip to the standard rate and length used by the pipeline.

    Clips at any other sample rate are rejected (resampling is out of
    scope). Short clips are zero-padded at the end, long ones truncated,
    so every clip presents the same number of samples downstream.
    """
    if clip.sample_rate != sample_rate:
        raise UnsupportedFormatError(
            f"clip {clip.clip_id!r} is sampled at {clip.sample_rate} Hz, expected {sample_rate} Hz"
        )
    target = int(round(sample_rate * duration_s))
    x = clip.samples
    if x.size > target:
        x = x[:target]
    elif x.size < target:
        x = np.concatenate([x, np.zeros(target - x.size)])
    else:
        return clip
    return AudioClip(samples=x, sample_rate=sample_rate, clip_id=clip.clip_id)
