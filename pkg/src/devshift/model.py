"""Multinomial logistic regression on time-averaged log-mel features.

Trained by mini-batch gradient descent with weight decay under a
warm-up / linear-decay / fine-tune learning-rate schedule. Augmentations are
re-drawn for every mini-batch of every epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .audio_io import read_wav, resample
from .augment import AugmentConfig, augment_batch
from .dataset_sim import Manifest, stable_seed
from .features import FeatureConfig, log_mel_spectrogram

log = logging.getLogger(__name__)

MODEL_MAGIC = "DEVSHIFT-LOGREG v1"
WARMUP_START_FACTOR = 1e-3


@dataclass
class ModelParams:
    weights: np.ndarray  # (C, F)
    bias: np.ndarray  # (C,)
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        n_features = self.weights.shape[1]
        if self.feature_mean is None:
            self.feature_mean = np.zeros(n_features)
        if self.feature_std is None:
            self.feature_std = np.ones(n_features)
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64)
        self.feature_std = np.asarray(self.feature_std, dtype=np.float64)
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match weights {self.weights.shape}")
        for name in ("weights", "bias", "feature_mean", "feature_std"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_std


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    peak_lr: float = 0.1
    warmup_frac: float = 0.08
    finetune_frac: float = 0.1
    final_lr_factor: float = 0.01
    weight_decay: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.peak_lr <= 0.0:
            raise ValueError(f"peak_lr must be > 0, got {self.peak_lr}")
        if self.warmup_frac < 0.0 or self.finetune_frac < 0.0 or self.warmup_frac + self.finetune_frac >= 1.0:
            raise ValueError("need warmup_frac, finetune_frac >= 0 and warmup_frac + finetune_frac < 1")


# ------------------------------------------------------------------ core math


def _check_dims(params: ModelParams, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != params.n_features:
        raise ValueError(f"features of shape {features.shape} do not match {params.n_features} model inputs")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Row-wise softmax(W f + b)."""
    features = np.asarray(features, dtype=np.float64)
    _check_dims(params, features)
    return np.exp(_log_softmax(features @ params.weights.T + params.bias))


def loss_and_grad(params: ModelParams, features: np.ndarray, soft_labels: np.ndarray, weight_decay: float):
    """Soft-label cross-entropy plus (wd/2)*||W||^2, with exact gradients.

    Returns ``(loss, ModelParams)``; the gradient object carries the caller's
    standardization constants unchanged.
    """
    features = np.asarray(features, dtype=np.float64)
    soft_labels = np.asarray(soft_labels, dtype=np.float64)
    _check_dims(params, features)
    if soft_labels.shape != (features.shape[0], params.n_classes):
        raise ValueError(f"labels of shape {soft_labels.shape} do not match {features.shape[0]}x{params.n_classes}")
    n = features.shape[0]
    log_p = _log_softmax(features @ params.weights.T + params.bias)
    loss = -np.sum(soft_labels * log_p) / n + 0.5 * weight_decay * np.sum(params.weights**2)
    # d loss / d logits, using sum_c y_ic = 1
    delta = (np.exp(log_p) * soft_labels.sum(axis=1, keepdims=True) - soft_labels) / n
    grad_w = delta.T @ features + weight_decay * params.weights
    grad_b = delta.sum(axis=0)
    return float(loss), ModelParams(grad_w, grad_b, params.feature_mean, params.feature_std)


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Exponential warm-up, linear decay, then constant fine-tuning rate."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = cfg.warmup_frac * total_steps
    tune = cfg.finetune_frac * total_steps
    decay = total_steps - warm - tune
    final = cfg.peak_lr * cfg.final_lr_factor
    if step < warm:
        return cfg.peak_lr * WARMUP_START_FACTOR ** (1.0 - step / warm)
    if step < warm + decay:
        return cfg.peak_lr + (final - cfg.peak_lr) * (step - warm) / decay
    return final


def init_params(n_classes: int, n_features: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(stable_seed("init", seed))
    bound = 1.0 / math.sqrt(n_features)
    return ModelParams(rng.uniform(-bound, bound, size=(n_classes, n_features)), np.zeros(n_classes))


# --------------------------------------------------------------------- data


@dataclass
class SplitData:
    """Decoded clips of one manifest split, with their clean spectrograms."""

    waveforms: list
    devices: list
    class_ids: np.ndarray
    classes: list
    clean_spectrograms: list = field(default_factory=list)

    def clean_features(self) -> np.ndarray:
        return np.stack([s.mean(axis=1) for s in self.clean_spectrograms])


def load_split(manifest: Manifest, split: str, feature_cfg: FeatureConfig, classes=None) -> SplitData:
    rows = manifest.split(split)
    classes = list(classes) if classes is not None else manifest.scenes
    index = {c: i for i, c in enumerate(classes)}
    waves, devices, ids = [], [], []
    for r in rows:
        if r.scene not in index:
            raise ValueError(f"scene {r.scene!r} unknown to the model (classes: {classes})")
        waves.append(resample(read_wav(manifest.path(r)), feature_cfg.sample_rate_hz))
        devices.append(r.device)
        ids.append(index[r.scene])
    specs = [log_mel_spectrogram(w, feature_cfg).values for w in waves]
    return SplitData(waves, devices, np.array(ids, dtype=np.int64), classes, specs)


# ----------------------------------------------------------------- training


def train_on(
    data: SplitData,
    bank,
    augment_cfg: AugmentConfig,
    feature_cfg: FeatureConfig,
    train_cfg: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
    workers: int = 1,
) -> ModelParams:
    n = len(data.waveforms)
    if n == 0:
        raise ValueError("training split is empty")
    clean = data.clean_features()
    mean = clean.mean(axis=0)
    std = np.maximum(clean.std(axis=0), 1e-8)
    params = init_params(len(data.classes), clean.shape[1], train_cfg.seed)
    params = ModelParams(params.weights, params.bias, mean, std)

    steps_per_epoch = math.ceil(n / train_cfg.batch_size)
    total = steps_per_epoch * train_cfg.epochs
    step = 0
    for epoch in range(train_cfg.epochs):
        order = np.random.default_rng(stable_seed("shuffle", train_cfg.seed, epoch)).permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * train_cfg.batch_size : (b + 1) * train_cfg.batch_size]
            batch = augment_batch(
                [data.waveforms[i] for i in idx],
                [data.devices[i] for i in idx],
                data.class_ids[idx],
                bank,
                augment_cfg,
                feature_cfg,
                stable_seed("batch", train_cfg.seed, augment_cfg.seed, epoch, b),
                n_classes=len(data.classes),
                clean_spectrograms=[data.clean_spectrograms[i] for i in idx],
                workers=workers,
            )
            x = params.standardize(batch.spectrograms.mean(axis=2))
            loss, grad = loss_and_grad(params, x, batch.labels, train_cfg.weight_decay)
            lr = lr_schedule(step, total, train_cfg)
            params = ModelParams(params.weights - lr * grad.weights, params.bias - lr * grad.bias, mean, std)
            losses.append(loss)
            step += 1
        epoch_loss = float(np.mean(losses))
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
    return params


def train(
    manifest: Manifest,
    bank,
    augment_cfg: AugmentConfig,
    feature_cfg: FeatureConfig,
    train_cfg: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
    workers: int = 1,
) -> ModelParams:
    """Train on the manifest's train split. Classes are the sorted scene labels of the whole manifest."""
    if not manifest.split("train"):
        raise ValueError("manifest has no train split")
    data = load_split(manifest, "train", feature_cfg, manifest.scenes)
    return train_on(data, bank, augment_cfg, feature_cfg, train_cfg, on_epoch, workers)


def predict(params: ModelParams, data: SplitData) -> np.ndarray:
    probs = forward(params, params.standardize(data.clean_features()))
    return probs.argmax(axis=1)


# --------------------------------------------------------------- model file


def format_model(params: ModelParams) -> str:
    row = lambda v: " ".join(repr(float(x)) for x in v)  # noqa: E731
    lines = [MODEL_MAGIC, f"{params.n_classes} {params.n_features}"]
    lines += [row(w) for w in params.weights]
    lines += [row(params.bias), row(params.feature_mean), row(params.feature_std)]
    return "\n".join(lines) + "\n"


def save_model(params: ModelParams, path) -> None:
    Path(path).write_text(format_model(params))


def load_model(path) -> ModelParams:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} model file")
    c, f = (int(v) for v in lines[1].split())
    if len(lines) < 2 + c + 3:
        raise ValueError(f"{path}: truncated model file")
    rows = [np.array([float(v) for v in line.split()]) for line in lines[2 : 2 + c + 3]]
    if any(len(r) != (c if i == c else f) for i, r in enumerate(rows)):
        raise ValueError(f"{path}: row lengths do not match header {c} {f}")
    return ModelParams(np.stack(rows[:c]), rows[c], rows[c + 1], rows[c + 2])
