"""Shared test helpers: hand-rolled WAV writers and synthetic fixtures.

The WAV writers here build RIFF bytes directly with ``struct`` so the
decoder under test is checked against an independent byte layout, not
against itself.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from birddetect import AudioClip, FeatureConfig, FeaturePair
from birddetect.augment import LabeledSample


def _riff(fmt_body: bytes, data: bytes, extra_chunks: list[bytes] | None = None) -> bytes:
    chunks = b"".join([
        b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body,
        *(extra_chunks or []),
        b"data" + struct.pack("<I", len(data)) + data + (b"\0" if len(data) % 2 else b""),
    ])
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def _fmt_body(tag: int, channels: int, rate: int, bits: int) -> bytes:
    block_align = channels * bits // 8
    return struct.pack("<HHIIHH", tag, channels, rate, rate * block_align,
                       block_align, bits)


def write_wav_pcm16(path, ints, rate=44100, channels=1) -> Path:
    """Write 16-bit PCM from raw integer codes (shape (n,) or (n, channels))."""
    ints = np.asarray(ints, dtype="<i2")
    data = ints.reshape(-1).tobytes()
    Path(path).write_bytes(_riff(_fmt_body(1, channels, rate, 16), data))
    return Path(path)


def write_wav_pcm8(path, codes, rate=44100) -> Path:
    data = np.asarray(codes, dtype=np.uint8).tobytes()
    Path(path).write_bytes(_riff(_fmt_body(1, 1, rate, 8), data))
    return Path(path)


def write_wav_pcm24(path, ints, rate=44100) -> Path:
    """24-bit PCM from signed integers in [-2^23, 2^23 - 1]."""
    out = bytearray()
    for v in np.asarray(ints, dtype=np.int64):
        out += int(v & 0xFFFFFF).to_bytes(3, "little")
    Path(path).write_bytes(_riff(_fmt_body(1, 1, rate, 24), bytes(out)))
    return Path(path)


def write_wav_float32(path, samples, rate=44100) -> Path:
    data = np.asarray(samples, dtype="<f4").tobytes()
    Path(path).write_bytes(_riff(_fmt_body(3, 1, rate, 32), data))
    return Path(path)


def write_wav(path, samples, rate=44100) -> Path:
    """Float samples in [-1, 1] quantized to 16-bit PCM."""
    ints = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767)
    return write_wav_pcm16(path, ints.astype("<i2"), rate=rate)


def tone(freq_hz: float, duration_s: float = 10.0, rate: int = 44100,
         amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(duration_s * rate))) / rate
    return amplitude * np.sin(2.0 * np.pi * freq_hz * t)


def make_pair(rng: np.random.Generator, t: int = 20, bands: int = 10,
              k: int = 3) -> FeaturePair:
    """Random but valid feature tensors for mixing/stacking tests."""
    return FeaturePair(
        mbe=rng.normal(size=(t, bands)),
        domfreq=np.abs(rng.normal(size=(t, k, 2))),
    )


def make_sample(rng: np.random.Generator, clip_id: str, label,
                t: int = 20, bands: int = 10, k: int = 3) -> LabeledSample:
    return LabeledSample(clip_id, make_pair(rng, t, bands, k), label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ten_second_clip():
    r = np.random.default_rng(7)
    return AudioClip(r.normal(size=441000) * 0.05, 44100, "fixture")
