"""Log-mel front end: STFT magnitude, mel filterbank, log compression and frame stacking."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import AudioClip, ClipMetadata
from .errors import ConfigError, FormatError, InputError


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 128
    stack_frames: int = 5
    fmin_hz: float = 0.0
    fmax_hz: Optional[float] = None  # None means sample_rate / 2
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_fft < 2 or self.hop < 1 or self.hop > self.n_fft:
            raise ConfigError(f"need 1 <= hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if self.stack_frames < 1:
            raise ConfigError(f"stack_frames must be >= 1, got {self.stack_frames}")
        if not self.log_floor > 0:
            raise ConfigError("log_floor must be positive")

    @property
    def dim(self) -> int:
        return self.n_mels * self.stack_frames


@dataclass
class FeatureMatrix:
    vectors: np.ndarray
    provenance: Optional[ClipMetadata] = None

    @property
    def shape(self):
        return self.vectors.shape


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(clip: AudioClip, n_fft: int, hop: int) -> np.ndarray:
    """Non-centred Hann STFT magnitude, shape (T, n_fft // 2 + 1)."""
    x = clip.samples
    if x.size < n_fft:
        raise InputError(f"clip has {x.size} samples, shorter than n_fft={n_fft}")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    return np.abs(np.fft.rfft(frames * hann_periodic(n_fft), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_peak_frequencies(n_mels: int, fmin_hz: float, fmax_hz: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels, n_fft, sample_rate_hz, fmin_hz=0.0, fmax_hz=None) -> np.ndarray:
    """Triangular filters with unit peaks, shape (n_mels, n_fft // 2 + 1)."""
    if fmax_hz is None:
        fmax_hz = sample_rate_hz / 2.0
    if not (0 <= fmin_hz < fmax_hz <= sample_rate_hz / 2.0):
        raise ConfigError(
            f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={fmin_hz}, fmax={fmax_hz}"
        )
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    lo, peak, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (peak - lo)
    falling = (hi - bins) / (hi - peak)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"n_mels={n_mels} too large for n_fft={n_fft}: filters {empty[:5].tolist()} cover no FFT bin"
        )
    return fb


def log_mel(clip: AudioClip, config: FeatureConfig) -> np.ndarray:
    power = stft_magnitude(clip, config.n_fft, config.hop) ** 2
    fb = mel_filterbank(
        config.n_mels, config.n_fft, clip.sample_rate_hz, config.fmin_hz, config.fmax_hz
    )
    return 10.0 * np.log10(np.maximum(power @ fb.T, config.log_floor))


def stack(logmel: np.ndarray, stack_frames: int, provenance=None) -> FeatureMatrix:
    """Row t is the concatenation of frames t .. t + stack_frames - 1."""
    logmel = np.asarray(logmel, dtype=np.float64)
    n_frames, n_mels = logmel.shape
    if n_frames < stack_frames:
        raise InputError(f"{n_frames} frames, fewer than stack_frames={stack_frames}")
    windows = np.lib.stride_tricks.sliding_window_view(logmel, stack_frames, axis=0)
    # sliding_window_view puts the window axis last: (T', n_mels, stack) -> (T', stack, n_mels)
    rows = windows.transpose(0, 2, 1).reshape(n_frames - stack_frames + 1, stack_frames * n_mels)
    return FeatureMatrix(np.ascontiguousarray(rows), provenance)


def extract(clip: AudioClip, config: FeatureConfig, meta: ClipMetadata | None = None) -> FeatureMatrix:
    return stack(log_mel(clip, config), config.stack_frames, provenance=meta)


def n_feature_rows(n_samples: int, config: FeatureConfig) -> int:
    return 1 + (n_samples - config.n_fft) // config.hop - config.stack_frames + 1


# Feature cache: <u32 rows><u32 dim> header, then row-major little-endian float64.

def save_feature_cache(path, matrix: FeatureMatrix | np.ndarray) -> None:
    data = matrix.vectors if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    rows, dim = data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", rows, dim))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(f"{path}: feature cache shorter than its 8-byte header")
    rows, dim = struct.unpack_from("<II", blob)
    if len(blob) != 8 + 8 * rows * dim:
        raise FormatError(f"{path}: header says {rows}x{dim} but payload has {len(blob) - 8} bytes")
    return np.frombuffer(blob, dtype="<f8", offset=8).reshape(rows, dim).astype(np.float64)
