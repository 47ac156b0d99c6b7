"""Device-robustness toolkit for acoustic scene classification.

Swept-sine impulse-response measurement, device impulse response (DIR)
augmentation, Freq-MixStyle, mixup, a log-mel front-end, a small softmax
classifier and per-device evaluation, plus a synthetic device-shift lab.
"""

from .audio_io import ImpulseResponse, Waveform, read_wav, resample, write_wav
from .augment import AugmentConfig, augment_batch, dir_augment, freq_mixstyle, mixup
from .evaluation import EvalReport, build_report, dg_score
from .features import CNN_PRESET, TRANSFORMER_PRESET, FeatureConfig, log_mel_spectrogram

__all__ = [
    "AugmentConfig", "CNN_PRESET", "EvalReport", "FeatureConfig", "ImpulseResponse", "TRANSFORMER_PRESET",
    "Waveform", "augment_batch", "build_report", "dg_score", "dir_augment", "freq_mixstyle",
    "log_mel_spectrogram", "mixup", "read_wav", "resample", "write_wav",
]
__version__ = "0.1.0"
