"""STFT -> mel -> log front-end.

Two presets mirror the published front-ends: ``CNN_PRESET`` (22.05 kHz,
2048-sample window, 512 hop, 256 mel bins) and ``TRANSFORMER_PRESET``
(32 kHz, 800-sample window, 320 hop, 128 mel bins).
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .audio_io import Waveform
from .errors import FilterbankResolutionError, SampleRateMismatch, SignalTooShortError

LOG_EPS = 1e-10
LOG_FLOOR = float(np.log(LOG_EPS))
MELS_MAGIC = b"MELS"


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate_hz: int
    window_size: int
    hop_size: int
    n_fft: int
    n_mels: int
    f_min_hz: float
    f_max_hz: float

    def __post_init__(self):
        if not 0 < self.hop_size <= self.window_size <= self.n_fft:
            raise ValueError(
                f"need 0 < hop_size <= window_size <= n_fft, got "
                f"{self.hop_size}, {self.window_size}, {self.n_fft}"
            )
        if self.n_mels < 1:
            raise ValueError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0.0 <= self.f_min_hz < self.f_max_hz <= self.sample_rate_hz / 2.0:
            raise ValueError(
                f"need 0 <= f_min < f_max <= Nyquist, got {self.f_min_hz}, {self.f_max_hz}"
            )

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.window_size) // self.hop_size


CNN_PRESET = FeatureConfig(22050, 2048, 512, 2048, 256, 0.0, 11025.0)
TRANSFORMER_PRESET = FeatureConfig(32000, 800, 320, 1024, 128, 0.0, 16000.0)
PRESETS = {"cnn": CNN_PRESET, "transformer": TRANSFORMER_PRESET}


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames), natural-log power
    config: FeatureConfig


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FeatureConfig) -> np.ndarray:
    """n_mels + 2 frequencies: lower edge, the n_mels centres, upper edge."""
    mels = np.linspace(hz_to_mel(cfg.f_min_hz), hz_to_mel(cfg.f_max_hz), cfg.n_mels + 2)
    return mel_to_hz(mels)


@functools.lru_cache(maxsize=16)
def _filterbank(cfg: FeatureConfig) -> np.ndarray:
    edges = mel_band_edges(cfg)
    bin_width = cfg.sample_rate_hz / cfg.n_fft
    widths = edges[2:] - edges[:-2]
    narrow = np.flatnonzero(widths < bin_width)
    if narrow.size:
        raise FilterbankResolutionError(
            f"{cfg.n_mels} mel bands too many for n_fft={cfg.n_fft}: filter {narrow[0]} "
            f"spans {widths[narrow[0]]:.2f} Hz < one bin ({bin_width:.2f} Hz)"
        )
    freqs = np.arange(cfg.n_fft // 2 + 1) * bin_width
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (centre - lower)
    falling = (upper - freqs[None, :]) / (upper - centre)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    empty = np.flatnonzero(fb.sum(axis=1) <= 0.0)
    if empty.size:
        raise FilterbankResolutionError(f"mel filter {empty[0]} covers no FFT bin")
    fb.flags.writeable = False
    return fb


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape (n_mels, n_fft // 2 + 1), peak 1."""
    return _filterbank(cfg).copy()


@functools.lru_cache(maxsize=16)
def _sparse_filterbank(cfg: FeatureConfig):
    return sparse.csr_matrix(_filterbank(cfg))


@functools.lru_cache(maxsize=16)
def _hann(window_size: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window_size) / window_size)
    w.flags.writeable = False
    return w


def power_spectrogram(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """|STFT|^2 with frames fully inside the signal, shape (n_fft // 2 + 1, n_frames)."""
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window_size)[:: cfg.hop_size]
    spec = np.fft.rfft(frames * _hann(cfg.window_size), n=cfg.n_fft, axis=1)
    return (spec.real**2 + spec.imag**2).T


def log_mel_spectrogram(w: Waveform, cfg: FeatureConfig) -> MelSpectrogram:
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise SampleRateMismatch(cfg.sample_rate_hz, w.sample_rate_hz)
    if len(w.samples) < cfg.window_size:
        raise SignalTooShortError(
            f"signal has {len(w.samples)} samples, shorter than one window ({cfg.window_size})"
        )
    power = power_spectrogram(w.samples, cfg)
    mel = np.asarray(_sparse_filterbank(cfg) @ power)
    return MelSpectrogram(np.log(mel + LOG_EPS), cfg)


def time_average_features(m: MelSpectrogram) -> np.ndarray:
    values = np.asarray(m.values)
    if values.shape[1] < 1:
        raise ValueError("spectrogram has no frames")
    return values.mean(axis=1)


# ------------------------------------------------------------------ dump format


def encode_mels(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    n_mels, n_frames = values.shape
    header = MELS_MAGIC + struct.pack("<III", n_mels, n_frames, 0)
    return header + values.astype("<f4").tobytes(order="C")


def write_mels(m: MelSpectrogram, path) -> None:
    Path(path).write_bytes(encode_mels(m.values))


def read_mels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MELS_MAGIC:
        raise ValueError(f"{path}: not a MELS dump")
    n_mels, n_frames, _ = struct.unpack("<III", data[4:16])
    body = data[16:]
    if len(body) != 4 * n_mels * n_frames:
        raise ValueError(f"{path}: expected {n_mels}x{n_frames} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(n_mels, n_frames).astype(np.float64)
