"""Mono waveform containers, RIFF/WAVE reading and writing, and resampling."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnsupportedWavError, WavFormatError

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3

PCM16_SCALE = 32768.0
PCM16_MAX = 1.0 - 2.0**-15

RESAMPLE_HALF_TAPS = 32
RESAMPLE_KAISER_BETA = 8.0


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        arr = _frozen_array(self.samples)
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(
            self.samples, other.samples
        )

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    samples: np.ndarray
    sample_rate_hz: int
    name: str = field(default="ir")

    def __post_init__(self):
        arr = _frozen_array(self.samples)
        if arr.size < 1:
            raise ValueError("impulse response must have at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"impulse response {self.name!r} has non-finite samples")
        if not np.any(arr != 0.0):
            raise ValueError(f"impulse response {self.name!r} is all zeros")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImpulseResponse):
            return NotImplemented
        return (
            self.name == other.name
            and self.sample_rate_hz == other.sample_rate_hz
            and np.array_equal(self.samples, other.samples)
        )


# --------------------------------------------------------------------------- WAV


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(cid.decode("latin-1"), f"chunk truncated ({len(body)} of {size} bytes)")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono waveform.

    Stereo input is averaged to mono. PCM16 values are divided by 32768.
    Raises FileNotFoundError, WavFormatError or UnsupportedWavError.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise WavFormatError("riff_id", "missing RIFF signature")
    if data[8:12] != b"WAVE":
        raise WavFormatError("wave_id", "missing WAVE form type")

    fmt = None
    payload = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data" and payload is None:
            payload = body
    if fmt is None:
        raise WavFormatError("fmt", "no fmt chunk")
    if len(fmt) < 16:
        raise WavFormatError("fmt", f"fmt chunk too short ({len(fmt)} bytes)")
    if payload is None:
        raise WavFormatError("data", "no data chunk")

    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedWavError("format_tag", f"format code {tag} not supported")
    if channels not in (1, 2):
        raise UnsupportedWavError("channels", f"{channels} channels not supported")
    if tag == WAVE_FORMAT_PCM and bits != 16:
        raise UnsupportedWavError("bits_per_sample", f"PCM with {bits} bits not supported")
    if tag == WAVE_FORMAT_IEEE_FLOAT and bits != 32:
        raise UnsupportedWavError("bits_per_sample", f"float with {bits} bits not supported")
    if rate == 0:
        raise WavFormatError("sample_rate", "sample rate is zero")
    if block_align != channels * bits // 8:
        raise WavFormatError("block_align", f"block_align {block_align} inconsistent with format")

    n_frames = len(payload) // block_align
    payload = payload[: n_frames * block_align]
    if tag == WAVE_FORMAT_PCM:
        raw = np.frombuffer(payload, dtype="<i2").astype(np.float64) / PCM16_SCALE
    else:
        raw = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    frames = raw.reshape(n_frames, channels)
    mono = frames[:, 0] if channels == 1 else frames.mean(axis=1)
    if not np.all(np.isfinite(mono)):
        raise WavFormatError("data", "non-finite sample values")
    return Waveform(mono, rate)


def encode_wav(w: Waveform, encoding: str = "pcm16") -> bytes:
    """Serialize a waveform as a canonical 44-byte-header mono WAV."""
    samples = np.asarray(w.samples, dtype=np.float64)
    if np.any(np.isnan(samples)):
        raise ValueError("cannot encode NaN samples")
    if encoding == "pcm16":
        clipped = np.clip(samples, -1.0, PCM16_MAX)
        body = np.rint(clipped * PCM16_SCALE).astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        body = samples.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}; expected 'pcm16' or 'float32'")
    block_align = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, tag, 1, w.sample_rate_hz, w.sample_rate_hz * block_align, block_align, bits
    )
    header += b"data" + struct.pack("<I", len(body))
    return header + body


def write_wav(w: Waveform, path, encoding: str = "pcm16") -> None:
    blob = encode_wav(w, encoding)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)


# ---------------------------------------------------------------------- resample


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Kaiser-windowed sinc resampling (32 zero crossings per side, beta 8).

    The cutoff sits at the lower of the two Nyquist frequencies. Output length
    is ``ceil(len(w) * target / source)``.
    """
    target_rate_hz = int(target_rate_hz)
    if target_rate_hz <= 0:
        raise ValueError(f"target_rate_hz must be positive, got {target_rate_hz}")
    src = w.sample_rate_hz
    if target_rate_hz == src:
        return w
    x = np.asarray(w.samples)
    n_out = math.ceil(len(x) * target_rate_hz / src)
    if len(x) == 0:
        return Waveform(np.zeros(0), target_rate_hz)

    ratio = min(1.0, target_rate_hz / src)
    # kernel support in input samples, widened when downsampling
    half = int(math.ceil(RESAMPLE_HALF_TAPS / ratio))
    offsets = np.arange(-half, half + 1)
    padded = np.concatenate([np.zeros(half + 1), x, np.zeros(half + 1)])
    out = np.empty(n_out)
    beta_norm = np.i0(RESAMPLE_KAISER_BETA)
    chunk = max(1, (1 << 16) // len(offsets))
    step = src / target_rate_hz
    for start in range(0, n_out, chunk):
        idx = np.arange(start, min(n_out, start + chunk))
        t = idx * step
        base = np.floor(t).astype(np.int64)
        k = base[:, None] + offsets[None, :]
        dist = t[:, None] - k
        u = dist * ratio / RESAMPLE_HALF_TAPS
        inside = np.abs(u) <= 1.0
        window = np.where(inside, np.i0(RESAMPLE_KAISER_BETA * np.sqrt(np.clip(1.0 - u * u, 0.0, None))) / beta_norm, 0.0)
        kern = ratio * np.sinc(ratio * dist) * window
        out[idx] = np.sum(padded[k + half + 1] * kern, axis=1)
    return Waveform(out, target_rate_hz)
