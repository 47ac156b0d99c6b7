"""Device-robustness augmentations.

DIR augmentation works on waveforms of the source device; Mixup,
Freq-MixStyle and frequency patchout work on batches of log-mel
spectrograms. ``augment_batch`` runs them in a fixed order:

    dir_augment -> log_mel_spectrogram -> mixup -> freq_mixstyle -> freq_patchout

Randomness is always drawn from explicit ``numpy.random.Generator`` streams.
Inside ``augment_batch`` every item/stage pair gets its own stream derived
from the batch seed, so results do not depend on how items are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dsp
from .audio_io import ImpulseResponse, Waveform, read_wav, resample
from .errors import EmptyBankError, SampleRateMismatch
from .features import FeatureConfig, MelSpectrogram, log_mel_spectrogram

FMS_EPS = 1e-5

STAGE_DIR = 1
STAGE_MIXUP = 2
STAGE_FMS = 3
STAGE_PATCHOUT = 4


@dataclass(frozen=True)
class AugmentConfig:
    p_dir: float = 0.6
    p_fms: float = 0.4
    alpha_fms: float = 0.4
    alpha_mixup: float = 0.3
    p_mixup: float = 0.0
    source_device: str = "a"
    patchout_bands: int = 0
    patchout_band_height: int = 1
    dir_all_devices: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("p_dir", "p_fms", "p_mixup"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for name in ("alpha_fms", "alpha_mixup"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.patchout_bands < 0 or self.patchout_band_height < 1:
            raise ValueError("patchout_bands must be >= 0 and patchout_band_height >= 1")

    @classmethod
    def disabled(cls, **overrides) -> "AugmentConfig":
        return replace(cls(p_dir=0.0, p_fms=0.0, p_mixup=0.0), **overrides)


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    spectrograms: np.ndarray  # (N, F, T)
    labels: np.ndarray  # (N, C), rows are probability vectors
    devices: tuple

    def __post_init__(self):
        if self.spectrograms.ndim != 3 or self.labels.ndim != 2:
            raise ValueError("expected spectrograms (N, F, T) and labels (N, C)")
        if not len(self.spectrograms) == len(self.labels) == len(self.devices):
            raise ValueError("spectrograms, labels and devices disagree on batch size")
        if np.any(self.labels < 0.0) or not np.allclose(self.labels.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("label rows must be probability vectors")

    def __len__(self) -> int:
        return len(self.devices)


def one_hot(class_ids, n_classes: int) -> np.ndarray:
    y = np.zeros((len(class_ids), n_classes))
    y[np.arange(len(class_ids)), np.asarray(class_ids, dtype=np.int64)] = 1.0
    return y


def stage_rng(seed: int, stage: int, item: int | None = None) -> np.random.Generator:
    key = [int(seed), 0, stage] if item is None else [int(seed), 1, int(item), stage]
    return np.random.default_rng(np.random.SeedSequence(key))


# ------------------------------------------------------------------------- banks


def load_ir_bank(directory, rate_hz: int) -> list[ImpulseResponse]:
    """Load every ``*.wav`` in ``directory`` (sorted by name), resampled to ``rate_hz``.

    All-zero files are rejected.
    """
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise EmptyBankError(f"no WAV files in IR bank directory {directory}")
    bank = []
    for p in paths:
        w = resample(read_wav(p), rate_hz)
        if not np.any(w.samples != 0.0):
            raise ValueError(f"impulse response {p.name} is all zeros")
        bank.append(ImpulseResponse(w.samples, rate_hz, p.stem))
    return bank


# --------------------------------------------------------------- waveform stage


def convolve_truncate_rms(samples: np.ndarray, ir: np.ndarray) -> np.ndarray:
    """Full convolution cut to the input length, rescaled to the input RMS."""
    y = dsp.fft_convolve(samples, ir)[: len(samples)]
    rms_in = np.sqrt(np.mean(samples**2))
    rms_out = np.sqrt(np.mean(y**2))
    if rms_out == 0.0:
        return y
    return y * (rms_in / rms_out)


def dir_augment(w: Waveform, device: str, bank, cfg: AugmentConfig, rng: np.random.Generator) -> Waveform:
    """Convolve source-device audio with a random DIR with probability ``cfg.p_dir``."""
    if not bank:
        raise EmptyBankError("DIR bank is empty")
    if device != cfg.source_device and not cfg.dir_all_devices:
        return w
    for ir in bank:
        if ir.sample_rate_hz != w.sample_rate_hz:
            raise SampleRateMismatch(w.sample_rate_hz, ir.sample_rate_hz)
    if rng.random() >= cfg.p_dir:
        return w
    ir = bank[int(rng.integers(len(bank)))]
    return Waveform(convolve_truncate_rms(w.samples, ir.samples), w.sample_rate_hz)


# ------------------------------------------------------------ spectrogram stages


def mix_frequency_statistics(x: np.ndarray, lam: float, perm) -> np.ndarray:
    """Freq-MixStyle core: re-style each item with mixed per-frequency mean/std.

    ``x`` has shape (N, F, T); statistics are taken over time.
    """
    mu = x.mean(axis=2, keepdims=True)
    sigma = x.std(axis=2, keepdims=True)
    perm = np.asarray(perm)
    mu_mix = lam * mu + (1.0 - lam) * mu[perm]
    sigma_mix = lam * sigma + (1.0 - lam) * sigma[perm]
    out = sigma_mix * (x - mu) / (sigma + FMS_EPS) + mu_mix
    # self-mixing is an exact fixed point; the eps term would otherwise shrink it slightly
    keep = np.full(len(x), True) if lam == 1.0 else perm == np.arange(len(x))
    out[keep] = x[keep]
    return out


def freq_mixstyle(batch: LabeledBatch, alpha: float, p_fms: float, rng: np.random.Generator) -> LabeledBatch:
    if rng.random() >= p_fms:
        return batch
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(batch))
    mixed = mix_frequency_statistics(batch.spectrograms, lam, perm)
    return LabeledBatch(mixed, batch.labels, batch.devices)


def mix_pairs(batch: LabeledBatch, lam: float, perm) -> LabeledBatch:
    perm = np.asarray(perm)
    x = lam * batch.spectrograms + (1.0 - lam) * batch.spectrograms[perm]
    y = lam * batch.labels + (1.0 - lam) * batch.labels[perm]
    return LabeledBatch(x, y, batch.devices)


def mixup(batch: LabeledBatch, alpha: float, p_mixup: float, rng: np.random.Generator) -> LabeledBatch:
    """Mixup with lambda folded to max(lambda, 1 - lambda); devices stay with item i."""
    if rng.random() >= p_mixup:
        return batch
    lam = float(rng.beta(alpha, alpha))
    lam = max(lam, 1.0 - lam)
    return mix_pairs(batch, lam, rng.permutation(len(batch)))


def freq_patchout(spec: np.ndarray, n_bands: int, band_height: int, rng: np.random.Generator) -> np.ndarray:
    """Set ``n_bands`` random bands of ``band_height`` rows to the matrix minimum."""
    spec = np.asarray(spec)
    n_rows = spec.shape[0]
    if n_bands < 0 or band_height < 1 or n_bands * band_height > n_rows:
        raise ValueError(f"cannot mask {n_bands} bands of height {band_height} in {n_rows} rows")
    if n_bands == 0:
        return spec.copy()
    starts = rng.choice(n_rows // band_height, size=n_bands, replace=False) * band_height
    out = spec.copy()
    floor = spec.min()
    for s in starts:
        out[s : s + band_height] = floor
    return out


# ---------------------------------------------------------------------- pipeline


def augment_batch(
    waveforms,
    devices,
    labels,
    bank,
    cfg: AugmentConfig,
    feature_cfg: FeatureConfig,
    rng_seed: int,
    *,
    n_classes: int | None = None,
    clean_spectrograms=None,
    workers: int = 1,
) -> LabeledBatch:
    """Run the full augmentation pipeline over one batch.

    ``labels`` are class ids (then ``n_classes`` is required) or an (N, C)
    matrix of probability vectors. ``clean_spectrograms[i]``, when given, must
    equal ``log_mel_spectrogram(waveforms[i])`` and is reused for items the DIR
    stage leaves untouched.
    """
    n = len(waveforms)
    if not n == len(devices) == len(labels):
        raise ValueError("waveforms, devices and labels disagree on batch size")
    rates = {w.sample_rate_hz for w in waveforms}
    if rates != {feature_cfg.sample_rate_hz}:
        raise SampleRateMismatch(feature_cfg.sample_rate_hz, min(rates - {feature_cfg.sample_rate_hz}))

    labels = np.asarray(labels)
    y = labels.astype(np.float64) if labels.ndim == 2 else one_hot(labels, n_classes)

    def front_end(i: int) -> np.ndarray:
        w = waveforms[i]
        if cfg.p_dir > 0.0:
            w = dir_augment(w, devices[i], bank, cfg, stage_rng(rng_seed, STAGE_DIR, i))
            if w is not waveforms[i] or clean_spectrograms is None:
                return log_mel_spectrogram(w, feature_cfg).values
        elif clean_spectrograms is None:
            return log_mel_spectrogram(w, feature_cfg).values
        spec = clean_spectrograms[i]
        return spec.values if isinstance(spec, MelSpectrogram) else spec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            specs = list(pool.map(front_end, range(n)))
    else:
        specs = [front_end(i) for i in range(n)]

    batch = LabeledBatch(np.stack(specs), y, tuple(devices))
    if cfg.p_mixup > 0.0:
        batch = mixup(batch, cfg.alpha_mixup, cfg.p_mixup, stage_rng(rng_seed, STAGE_MIXUP))
    if cfg.p_fms > 0.0:
        batch = freq_mixstyle(batch, cfg.alpha_fms, cfg.p_fms, stage_rng(rng_seed, STAGE_FMS))
    if cfg.patchout_bands > 0:
        patched = [
            freq_patchout(s, cfg.patchout_bands, cfg.patchout_band_height, stage_rng(rng_seed, STAGE_PATCHOUT, i))
            for i, s in enumerate(batch.spectrograms)
        ]
        batch = LabeledBatch(np.stack(patched), batch.labels, batch.devices)
    return batch
