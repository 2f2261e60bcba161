"""Acoustic feature extraction: log mel-band energies and dominant frequencies.

Both feature classes share one framing front end: 40 ms frames hopped by
20 ms (50% overlap), Hamming-windowed and zero-padded to the FFT size.
A 10 s clip at 44.1 kHz therefore yields exactly 500 frames.

``mbe``     : per-frame log of mel-weighted spectral power, 40 bands over
              0-22050 Hz by default.
``domfreq`` : per-frame top-K spectral peaks inside 500-8000 Hz, each peak
              refined by parabolic interpolation of log magnitudes and
              reported as (frequency Hz, linear magnitude). Frames with
              fewer than K surviving peaks fill the tail slots with (0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .audio import AudioClip

__all__ = [
    "FeatureConfig",
    "FeaturePair",
    "hz_to_mel",
    "mel_to_hz",
    "frame_signal",
    "hamming",
    "stft_magnitude",
    "mel_filterbank",
    "log_mel_energies",
    "parabolic_interpolate",
    "dominant_frequencies",
    "extract_features",
]

# Floor applied inside log() of spectral magnitudes during peak interpolation.
# Distinct from FeatureConfig.log_floor, which floors mel energies.
_PEAK_LOG_FLOOR = 1e-30


def hz_to_mel(f):
    """mel(f) = 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for both feature classes.

    ``band_limited()`` builds the narrowed 3-8 kHz variant, which confines
    both the mel filterbank and the peak search to that band.
    """

    frame_len_ms: float = 40.0
    hop_ms: float = 20.0
    fft_size: int = 2048
    n_mels: int = 40
    mel_fmin: float = 0.0
    mel_fmax: float = 22050.0
    domfreq_k: int = 3
    domfreq_fmin: float = 500.0
    domfreq_fmax: float = 8000.0
    peak_threshold_ratio: float = 0.1
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.frame_len_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("frame and hop lengths must be positive")
        if self.fft_size < 2:
            raise ValueError("fft_size must be at least 2")
        if self.n_mels < 1:
            raise ValueError("n_mels must be at least 1")
        if not 0 <= self.mel_fmin < self.mel_fmax:
            raise ValueError("need 0 <= mel_fmin < mel_fmax")
        if self.domfreq_k < 1:
            raise ValueError("domfreq_k must be at least 1")
        if not 0 <= self.domfreq_fmin < self.domfreq_fmax:
            raise ValueError("need 0 <= domfreq_fmin < domfreq_fmax")
        if not 0 <= self.peak_threshold_ratio <= 1:
            raise ValueError("peak_threshold_ratio must be in [0, 1]")

    @classmethod
    def band_limited(cls, fmin: float = 3000.0, fmax: float = 8000.0, **kwargs) -> "FeatureConfig":
        """Variant with both feature classes confined to [fmin, fmax]."""
        return cls(
            mel_fmin=fmin, mel_fmax=fmax, domfreq_fmin=fmin, domfreq_fmax=fmax, **kwargs
        )

    def frame_len(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def hop_len(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass
class FeaturePair:
    """The two per-clip feature tensors the network consumes.

    mbe     : (T, n_mels) log mel-band energies
    domfreq : (T, K, 2) where plane 0 holds frequencies in Hz and plane 1
              their linear magnitudes
    """

    mbe: np.ndarray
    domfreq: np.ndarray

    def __post_init__(self):
        self.mbe = np.asarray(self.mbe, dtype=np.float64)
        self.domfreq = np.asarray(self.domfreq, dtype=np.float64)
        if self.mbe.ndim != 2:
            raise ValueError(f"mbe must be 2-D (T, bands), got shape {self.mbe.shape}")
        if self.domfreq.ndim != 3 or self.domfreq.shape[2] != 2:
            raise ValueError(f"domfreq must be (T, K, 2), got shape {self.domfreq.shape}")
        if self.mbe.shape[0] != self.domfreq.shape[0]:
            raise ValueError(
                f"frame counts disagree: mbe has {self.mbe.shape[0]}, "
                f"domfreq has {self.domfreq.shape[0]}"
            )
        if not (np.all(np.isfinite(self.mbe)) and np.all(np.isfinite(self.domfreq))):
            raise ValueError("feature tensors must be finite")

    @property
    def n_frames(self) -> int:
        return self.mbe.shape[0]


def frame_signal(clip: "AudioClip", cfg: FeatureConfig) -> np.ndarray:
    """Slice a clip into overlapping frames, zero-padding the tail.

    The frame count is exactly ceil(len / hop): frames that would overrun
    the signal are completed with zeros, so a 441000-sample clip framed at
    40 ms / 20 ms produces exactly 500 frames of 1764 samples.
    """
    sr = clip.sample_rate
    frame_len = cfg.frame_len(sr)
    hop = cfg.hop_len(sr)
    if hop == 0:
        raise ValueError("hop length rounds to zero samples at this sample rate")
    x = clip.samples
    n_frames = -(-x.size // hop)  # ceil division
    padded_len = (n_frames - 1) * hop + frame_len
    if padded_len > x.size:
        x = np.concatenate([x, np.zeros(padded_len - x.size)])
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.ascontiguousarray(windows[:n_frames])


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window: w[i] = 0.54 - 0.46 cos(2 pi i / (n - 1))."""
    if n < 2:
        raise ValueError("window length must be at least 2")
    i = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * i / (n - 1))


def stft_magnitude(frames: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Magnitude spectrogram of Hamming-windowed, zero-padded frames.

    Returns (T, fft_size // 2 + 1), the non-negative half spectrum.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D (T, frame_len) matrix")
    frame_len = frames.shape[1]
    if frame_len > cfg.fft_size:
        raise ValueError(f"frame length {frame_len} exceeds fft_size {cfg.fft_size}")
    windowed = frames * hamming(frame_len)
    return np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=1))


def mel_filterbank(cfg: FeatureConfig, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank sampled at the FFT bin frequencies.

    Filter centers are spaced uniformly on the mel scale between
    mel(mel_fmin) and mel(mel_fmax); each triangle peaks at 1. Returns
    (n_mels, fft_size // 2 + 1).
    """
    if cfg.mel_fmax > sample_rate / 2:
        raise ValueError(
            f"mel_fmax {cfg.mel_fmax} Hz exceeds Nyquist {sample_rate / 2} Hz"
        )
    n_bins = cfg.fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * (sample_rate / cfg.fft_size)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2))

    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise ValueError(
            f"mel band(s) {empty.tolist()} cover no FFT bin; "
            f"fewer FFT bins than mel bands in {cfg.mel_fmin}-{cfg.mel_fmax} Hz"
        )
    return fb


def log_mel_energies(spec: np.ndarray, fb: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    """log(floor + filterbank-weighted spectral power), per frame and band."""
    if spec.shape[1] != fb.shape[1]:
        raise ValueError(
            f"spectrogram has {spec.shape[1]} bins but filterbank expects {fb.shape[1]}"
        )
    return np.log(log_floor + (spec**2) @ fb.T)


def parabolic_interpolate(alpha, beta, gamma):
    """Vertex of the parabola through (-1, alpha), (0, beta), (1, gamma).

    Returns (offset, value): the fractional bin offset p in [-0.5, 0.5] for
    a true local maximum, and the interpolated peak value
    beta - (alpha - gamma) * p / 4. A flat triple (zero curvature) gets
    offset 0 rather than an error.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    denom = alpha - 2.0 * beta + gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(denom == 0.0, 0.0, 0.5 * (alpha - gamma) / denom)
    value = beta - 0.25 * (alpha - gamma) * p
    return p, value


def dominant_frequencies(spec: np.ndarray, cfg: FeatureConfig, sample_rate: int) -> np.ndarray:
    """Per-frame top-K interpolated spectral peaks inside the search band.

    Peak picking per frame:
      1. local maxima: spec[k-1] < spec[k] >= spec[k+1] at interior bins,
         kept only if the interpolated frequency falls in
         [domfreq_fmin, domfreq_fmax];
      2. a peak must reach peak_threshold_ratio of the frame's maximum
         magnitude (measured on raw bin magnitudes) to survive;
      3. survivors are refined by parabolic interpolation on log
         magnitudes, giving frequency (k + p) * sr / fft_size and linear
         magnitude exp(interpolated log magnitude);
      4. the K largest-magnitude peaks are kept, sorted by descending
         magnitude; missing slots are filled with (0, 0).

    Returns (T, K, 2): plane 0 frequencies in Hz, plane 1 magnitudes.
    """
    if cfg.domfreq_fmax > sample_rate / 2:
        raise ValueError(
            f"domfreq_fmax {cfg.domfreq_fmax} Hz exceeds Nyquist {sample_rate / 2} Hz"
        )
    spec = np.asarray(spec, dtype=np.float64)
    n_frames = spec.shape[0]
    k_slots = cfg.domfreq_k

    inner = spec[:, 1:-1]
    is_peak = (spec[:, :-2] < inner) & (inner >= spec[:, 2:])

    logm = np.log(np.maximum(spec, _PEAK_LOG_FLOOR))
    alpha, beta, gamma = logm[:, :-2], logm[:, 1:-1], logm[:, 2:]
    p, log_peak = parabolic_interpolate(alpha, beta, gamma)

    bins = np.arange(1, spec.shape[1] - 1, dtype=np.float64)
    freqs = (bins + p) * (sample_rate / cfg.fft_size)
    # Non-peak lanes can overflow exp; they are masked out below. True local
    # maxima have |p| <= 1/2 and a vertex within |alpha - gamma|/8 of beta.
    with np.errstate(over="ignore"):
        mags = np.exp(log_peak)

    threshold = cfg.peak_threshold_ratio * spec.max(axis=1, keepdims=True)
    eligible = (
        is_peak
        & (freqs >= cfg.domfreq_fmin)
        & (freqs <= cfg.domfreq_fmax)
        & (inner >= threshold)
    )

    ranked = np.where(eligible, mags, -np.inf)
    order = np.argsort(-ranked, axis=1, kind="stable")[:, :k_slots]
    top_ok = np.take_along_axis(eligible, order, axis=1)

    out = np.zeros((n_frames, k_slots, 2))
    out[:, : order.shape[1], 0] = np.where(top_ok, np.take_along_axis(freqs, order, axis=1), 0.0)
    out[:, : order.shape[1], 1] = np.where(top_ok, np.take_along_axis(mags, order, axis=1), 0.0)
    return out


def extract_features(clip: "AudioClip", cfg: FeatureConfig | None = None) -> FeaturePair:
    """Run the full front end on one clip.

    Deterministic: the same clip and config always produce bitwise
    identical tensors. For the standard 10 s / 44.1 kHz clip this yields
    mbe of shape (500, 40) and domfreq of shape (500, K, 2).
    """
    cfg = cfg or FeatureConfig()
    sr = clip.sample_rate
    if cfg.frame_len(sr) > cfg.fft_size:
        raise ValueError(
            f"frame of {cfg.frame_len(sr)} samples does not fit fft_size {cfg.fft_size}"
        )
    frames = frame_signal(clip, cfg)
    spec = stft_magnitude(frames, cfg)
    fb = mel_filterbank(cfg, sr)
    mbe = log_mel_energies(spec, fb, cfg.log_floor)
    domfreq = dominant_frequencies(spec, cfg, sr)
    return FeaturePair(mbe=mbe, domfreq=domfreq)
