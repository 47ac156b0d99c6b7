"""Convolution, exponential-sine-sweep IR measurement and magnitude responses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import ImpulseResponse, Waveform
from .errors import SampleRateMismatch, SilentInputError

DB_FLOOR = -120.0


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    freqs_hz: np.ndarray
    magnitude_db: np.ndarray


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (int(n) - 1).bit_length()


def _check_rates(a, b) -> None:
    if a.sample_rate_hz != b.sample_rate_hz:
        raise SampleRateMismatch(a.sample_rate_hz, b.sample_rate_hz)


# ------------------------------------------------------------------ convolution


def direct_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution by shift-and-add; O(N*M)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if len(x) == 0 or len(h) == 0:
        return np.zeros(max(0, len(x) + len(h) - 1))
    # loop over the shorter operand, vectorize over the longer
    if len(h) > len(x):
        x, h = h, x
    y = np.zeros(len(x) + len(h) - 1)
    for k, hk in enumerate(h):
        if hk != 0.0:
            y[k : k + len(x)] += hk * x
    return y


def fft_convolve(x: np.ndarray, h: np.ndarray, n_fft: int | None = None) -> np.ndarray:
    """Full linear convolution through a zero-padded real FFT of size next_pow2(N+M-1)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    n_out = len(x) + len(h) - 1
    if len(x) == 0 or len(h) == 0:
        return np.zeros(max(0, n_out))
    n = n_fft or next_pow2(n_out)
    spec = np.fft.rfft(x, n) * np.fft.rfft(h, n)
    return np.fft.irfft(spec, n)[:n_out]


def convolve_direct(x: Waveform, h: ImpulseResponse) -> Waveform:
    _check_rates(x, h)
    return Waveform(direct_convolve(x.samples, h.samples), x.sample_rate_hz)


def convolve_fft(x: Waveform, h: ImpulseResponse) -> Waveform:
    _check_rates(x, h)
    return Waveform(fft_convolve(x.samples, h.samples), x.sample_rate_hz)


# ------------------------------------------------------------ swept-sine method


def ess_signal(f_start_hz: float, f_end_hz: float, duration_s: float, rate_hz: int) -> np.ndarray:
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    rate_log = math.log(f_end_hz / f_start_hz)
    phase = 2.0 * math.pi * f_start_hz * duration_s / rate_log * np.expm1(t * rate_log / duration_s)
    return np.sin(phase)


def synchronized_duration(f_start_hz: float, f_end_hz: float, duration_s: float, rate_hz: int) -> float:
    """Nearest whole-sample duration at which the sweep phase returns to a zero crossing.

    A sweep that stops mid-cycle ends in a click whose broadband energy shows up
    as ripple in the deconvolved response; ending on a zero crossing avoids it.
    """
    rate_log = math.log(f_end_hz / f_start_hz)
    n0 = int(round(duration_s * rate_hz))
    candidates = np.arange(max(2, n0 - 512), n0 + 513)
    t = candidates / rate_hz
    phase = 2.0 * math.pi * f_start_hz * t / rate_log * (f_end_hz / f_start_hz - 1.0)
    residual = np.abs(np.sin(phase)) + 1e-9 * np.abs(candidates - n0)
    return float(candidates[int(np.argmin(residual))] / rate_hz)


def generate_ess(f_start_hz: float, f_end_hz: float, duration_s: float, rate_hz: int):
    """Exponential sine sweep and its amplitude-compensated inverse filter.

    The inverse filter is the time-reversed sweep with an exponentially decaying
    envelope (+6 dB/octave relative to the reversed sweep), scaled so that
    sweep * inverse has unit magnitude in the middle of the swept band.
    """
    if not 0.0 < f_start_hz < f_end_hz:
        raise ValueError(f"need 0 < f_start < f_end, got {f_start_hz}, {f_end_hz}")
    if f_end_hz > rate_hz / 2.0:
        raise ValueError(f"f_end {f_end_hz} Hz above Nyquist ({rate_hz / 2.0} Hz)")
    if duration_s <= 0.0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    sweep = ess_signal(f_start_hz, f_end_hz, duration_s, rate_hz)
    if len(sweep) < 2:
        raise ValueError("sweep shorter than two samples")
    rate_log = math.log(f_end_hz / f_start_hz)
    t = np.arange(len(sweep)) / rate_hz
    inverse = sweep[::-1] * np.exp(-t * rate_log / duration_s)

    n = next_pow2(2 * len(sweep) - 1)
    combined = np.abs(np.fft.rfft(sweep, n) * np.fft.rfft(inverse, n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate_hz)
    centre = math.sqrt(f_start_hz * f_end_hz)
    band = (freqs >= centre / 2.0) & (freqs <= centre * 2.0)
    inverse /= np.median(combined[band])
    return Waveform(sweep, rate_hz), Waveform(inverse, rate_hz)


def deconvolve_ess(recorded: Waveform, inverse_filter: Waveform, ir_length: int, name: str = "ess") -> ImpulseResponse:
    """Recover an impulse response from a recorded sweep.

    The window starts ``ir_length // 8`` samples before the main peak and the
    result is peak-normalized.
    """
    _check_rates(recorded, inverse_filter)
    if ir_length < 1:
        raise ValueError(f"ir_length must be >= 1, got {ir_length}")
    if not np.any(recorded.samples != 0.0):
        raise SilentInputError("recorded signal is silent")
    y = fft_convolve(recorded.samples, inverse_filter.samples)
    peak = int(np.argmax(np.abs(y)))
    start = peak - ir_length // 8
    ir = np.zeros(ir_length)
    lo, hi = max(start, 0), min(start + ir_length, len(y))
    ir[lo - start : hi - start] = y[lo:hi]
    ir /= np.max(np.abs(ir))
    return ImpulseResponse(ir, recorded.sample_rate_hz, name)


# ------------------------------------------------------------- frequency domain


def frequency_magnitude_response(h: ImpulseResponse, n_points: int = 1025) -> FrequencyResponse:
    """Magnitude response in dB at ``n_points`` uniform frequencies on [0, Nyquist]."""
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    base = 2 * (n_points - 1)
    # oversample when h is longer than the grid so bins stay exact DTFT samples
    stride = max(1, math.ceil(len(h.samples) / base))
    spectrum = np.fft.rfft(h.samples, base * stride)[::stride]
    mag = np.abs(spectrum)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    db = np.maximum(db, DB_FLOOR)
    freqs = np.linspace(0.0, h.sample_rate_hz / 2.0, n_points)
    return FrequencyResponse(freqs, db)
