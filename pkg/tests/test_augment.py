import numpy as np
import pytest
from helpers import loop_convolve
from hypothesis import given, settings
from hypothesis import strategies as st

from devshift.audio_io import ImpulseResponse, Waveform, write_wav
from devshift.augment import (
    FMS_EPS,
    STAGE_DIR,
    AugmentConfig,
    LabeledBatch,
    augment_batch,
    dir_augment,
    freq_mixstyle,
    freq_patchout,
    load_ir_bank,
    mix_frequency_statistics,
    mix_pairs,
    mixup,
    one_hot,
    stage_rng,
)
from devshift.errors import EmptyBankError, SampleRateMismatch
from devshift.features import FeatureConfig, log_mel_spectrogram

RATE = 8000
SMALL_FEATURES = FeatureConfig(RATE, 256, 128, 256, 16, 0.0, 4000.0)


def rng(seed=0):
    return np.random.default_rng(seed)


def random_batch(seed, n=6, f=5, t=9, c=3):
    g = rng(seed)
    return LabeledBatch(g.standard_normal((n, f, t)) * 2 + 1, one_hot(g.integers(0, c, n), c), tuple("a" * n))


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


# ------------------------------------------------------------------- config


def test_defaults():
    cfg = AugmentConfig()
    assert (cfg.p_dir, cfg.p_fms, cfg.alpha_fms, cfg.alpha_mixup, cfg.source_device) == (0.6, 0.4, 0.4, 0.3, "a")


@pytest.mark.parametrize("kw", [{"p_dir": 1.1}, {"p_fms": -0.1}, {"alpha_fms": 0.0}, {"patchout_band_height": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AugmentConfig(**kw)


# ---------------------------------------------------------------------- DIR


def test_dir_probability_zero_is_identity():
    w = Waveform(rng().standard_normal(100), RATE)
    bank = [ImpulseResponse([0.3, 0.2], RATE)]
    cfg = AugmentConfig(p_dir=0.0)
    g = rng(1)
    assert all(dir_augment(w, "a", bank, cfg, g) is w for _ in range(50))


def test_dir_non_source_device_untouched():
    w = Waveform(rng().standard_normal(100), RATE)
    out = dir_augment(w, "b", [ImpulseResponse([0.3, 0.2], RATE)], AugmentConfig(p_dir=1.0), rng())
    assert out is w


def test_dir_all_devices_flag():
    w = Waveform(rng().standard_normal(100), RATE)
    cfg = AugmentConfig(p_dir=1.0, dir_all_devices=True)
    assert dir_augment(w, "b", [ImpulseResponse([0.3, 0.2], RATE)], cfg, rng()) != w


def test_dir_delta_bank_is_identity():
    w = Waveform(rng().standard_normal(300), RATE)
    out = dir_augment(w, "a", [ImpulseResponse([1.0], RATE)], AugmentConfig(p_dir=1.0), rng())
    assert np.max(np.abs(out.samples - w.samples)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_dir_matches_truncated_rescaled_convolution(n, m, seed):
    g = rng(seed)
    x = g.standard_normal(n)
    h = g.standard_normal(m)
    if not np.any(h):
        h[0] = 1.0
    out = dir_augment(Waveform(x, RATE), "a", [ImpulseResponse(h, RATE)], AugmentConfig(p_dir=1.0), g)
    full = loop_convolve(x, h)[:n]
    expected = full * (rms(x) / rms(full)) if rms(full) > 0 else full
    assert len(out) == n
    assert np.max(np.abs(out.samples - expected)) <= 1e-9 * max(1.0, np.max(np.abs(expected)))
    if rms(full) > 0:
        assert abs(rms(out.samples) / rms(x) - 1) < 1e-6


def test_dir_selection_is_uniform():
    w = Waveform(np.r_[1.0, np.zeros(7)], RATE)
    bank = [ImpulseResponse([1.0], RATE, "d0"), ImpulseResponse([0.0, 1.0], RATE, "d1")]
    g = rng(5)
    cfg = AugmentConfig(p_dir=1.0)
    picks = [dir_augment(w, "a", bank, cfg, g).samples[1] > 0.5 for _ in range(10_000)]
    assert abs(np.mean(picks) - 0.5) <= 0.02


def test_dir_gate_rate():
    w = Waveform(rng().standard_normal(50), RATE)
    bank = [ImpulseResponse([0.5, 0.5], RATE)]
    g = rng(9)
    fired = [dir_augment(w, "a", bank, AugmentConfig(p_dir=0.6), g) is not w for _ in range(5000)]
    assert abs(np.mean(fired) - 0.6) < 0.03


def test_dir_errors():
    w = Waveform([1.0, 2.0], RATE)
    with pytest.raises(EmptyBankError):
        dir_augment(w, "a", [], AugmentConfig(), rng())
    with pytest.raises(SampleRateMismatch):
        dir_augment(w, "a", [ImpulseResponse([1.0], 16000)], AugmentConfig(p_dir=1.0), rng())


def test_load_ir_bank(tmp_path):
    write_wav(Waveform([0.0, 1.0, 0.5], 16000), tmp_path / "b.wav", "float32")
    write_wav(Waveform([1.0, 0.25], RATE), tmp_path / "a.wav", "float32")
    bank = load_ir_bank(tmp_path, RATE)
    assert [ir.name for ir in bank] == ["a", "b"]
    assert all(ir.sample_rate_hz == RATE for ir in bank)
    assert len(bank[1].samples) == 2


def test_load_ir_bank_rejects_empty_and_zero(tmp_path):
    with pytest.raises(EmptyBankError):
        load_ir_bank(tmp_path, RATE)
    write_wav(Waveform([0.0, 0.0], RATE), tmp_path / "z.wav", "float32")
    with pytest.raises(ValueError):
        load_ir_bank(tmp_path, RATE)


# ---------------------------------------------------------------------- FMS


def test_fms_statistics_match_mixed_targets():
    for seed in range(20):
        b = random_batch(seed)
        g = rng(seed)
        lam = float(g.beta(0.4, 0.4))
        perm = g.permutation(len(b))
        out = mix_frequency_statistics(b.spectrograms, lam, perm)
        x = b.spectrograms
        for i in range(len(b)):
            mu_i, sd_i = x[i].mean(axis=1), x[i].std(axis=1)
            mu_j, sd_j = x[perm[i]].mean(axis=1), x[perm[i]].std(axis=1)
            mu_mix = lam * mu_i + (1 - lam) * mu_j
            sd_mix = lam * sd_i + (1 - lam) * sd_j
            assert np.max(np.abs(out[i].mean(axis=1) - mu_mix)) < 1e-4
            assert np.max(np.abs(out[i].std(axis=1) - sd_mix * sd_i / (sd_i + FMS_EPS))) < 1e-4


def test_fms_fixed_points():
    b = random_batch(1)
    n = len(b)
    assert np.array_equal(mix_frequency_statistics(b.spectrograms, 1.0, rng().permutation(n)), b.spectrograms)
    assert np.array_equal(mix_frequency_statistics(b.spectrograms, 0.3, np.arange(n)), b.spectrograms)
    perm = np.array([0, 2, 1, 3, 5, 4])
    out = mix_frequency_statistics(b.spectrograms, 0.3, perm)
    assert np.array_equal(out[[0, 3]], b.spectrograms[[0, 3]])
    assert not np.array_equal(out[1], b.spectrograms[1])
    assert freq_mixstyle(b, 0.4, 0.0, rng()) is b


def test_fms_keeps_labels_and_shape():
    b = random_batch(2)
    out = freq_mixstyle(b, 0.4, 1.0, rng(3))
    assert out.spectrograms.shape == b.spectrograms.shape
    assert np.array_equal(out.labels, b.labels) and out.devices == b.devices


def test_fms_gate_rate():
    b = random_batch(4)
    g = rng(11)
    fired = [freq_mixstyle(b, 0.4, 0.4, g) is not b for _ in range(4000)]
    assert abs(np.mean(fired) - 0.4) < 0.03


# -------------------------------------------------------------------- mixup


def test_mixup_example_label():
    x = np.zeros((2, 1, 1))
    b = LabeledBatch(x, one_hot([0, 1], 3), ("a", "b"))
    out = mix_pairs(b, 0.7, [1, 0])
    assert np.allclose(out.labels[0], [0.7, 0.3, 0.0])
    assert out.devices == ("a", "b")


def test_mixup_lambda_one_and_p_zero():
    b = random_batch(3)
    out = mix_pairs(b, 1.0, rng().permutation(len(b)))
    assert np.array_equal(out.spectrograms, b.spectrograms) and np.array_equal(out.labels, b.labels)
    assert mixup(b, 0.3, 0.0, rng()) is b


def test_mixup_labels_stay_probability_vectors():
    for seed in range(100):
        b = random_batch(seed, n=int(rng(seed).integers(1, 9)), c=4)
        out = mixup(b, 0.3, 1.0, rng(seed + 1000))
        assert np.all(out.labels >= 0)
        assert np.max(np.abs(out.labels.sum(axis=1) - 1)) <= 1e-9
        assert out.spectrograms.shape == b.spectrograms.shape


def test_mixup_lambda_folded():
    b = LabeledBatch(np.zeros((2, 1, 1)), one_hot([0, 1], 2), ("a", "a"))
    for seed in range(50):
        out = mixup(b, 0.3, 1.0, rng(seed))
        assert out.labels[0, 0] >= 0.5 or np.array_equal(out.labels, b.labels)


def test_labeled_batch_validation():
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((2, 1, 1)), np.array([[0.5, 0.4], [1.0, 0.0]]), ("a", "a"))
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((2, 1, 1)), one_hot([0], 2), ("a", "a"))


# ----------------------------------------------------------------- patchout


def test_patchout_examples():
    spec = rng().standard_normal((12, 5))
    assert np.array_equal(freq_patchout(spec, 0, 2, rng()), spec)
    full = freq_patchout(spec, 4, 3, rng())
    assert np.all(full == spec.min())
    with pytest.raises(ValueError):
        freq_patchout(spec, 5, 3, rng())


def test_patchout_changes_exactly_the_masked_rows():
    for seed in range(50):
        g = rng(seed)
        f = int(g.integers(4, 30))
        h = int(g.integers(1, 4))
        n = int(g.integers(0, f // h + 1))
        spec = g.standard_normal((f, 6)) + 5
        out = freq_patchout(spec, n, h, rng(seed + 1))
        changed = np.flatnonzero(np.any(out != spec, axis=1))
        assert len(changed) == n * h
        assert np.all(out[changed] == spec.min())


# ----------------------------------------------------------------- pipeline


def pipeline_inputs(n=6, seed=0):
    g = rng(seed)
    waves = [Waveform(g.standard_normal(1024), RATE) for _ in range(n)]
    devices = ["a", "b", "a", "c", "a", "a"][:n]
    labels = g.integers(0, 3, n)
    bank = [ImpulseResponse(g.standard_normal(32) * np.exp(-np.arange(32) / 6), RATE, f"ir{k}") for k in range(4)]
    return waves, devices, labels, bank


def test_disabled_pipeline_equals_features():
    waves, devices, labels, bank = pipeline_inputs()
    out = augment_batch(waves, devices, labels, bank, AugmentConfig.disabled(), SMALL_FEATURES, 3, n_classes=3)
    for w, s in zip(waves, out.spectrograms):
        assert np.array_equal(s, log_mel_spectrogram(w, SMALL_FEATURES).values)
    assert np.array_equal(out.labels, one_hot(labels, 3))


def test_dir_only_pipeline_equals_composition():
    waves, devices, labels, bank = pipeline_inputs()
    cfg = AugmentConfig.disabled(p_dir=1.0)
    out = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 17, n_classes=3)
    for i, (w, d) in enumerate(zip(waves, devices)):
        expected = log_mel_spectrogram(dir_augment(w, d, bank, cfg, stage_rng(17, STAGE_DIR, i)), SMALL_FEATURES)
        assert np.array_equal(out.spectrograms[i], expected.values)


def test_clean_spectrogram_reuse_is_transparent():
    waves, devices, labels, bank = pipeline_inputs()
    cfg = AugmentConfig(p_mixup=1.0, patchout_bands=2)
    clean = [log_mel_spectrogram(w, SMALL_FEATURES) for w in waves]
    a = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 5, n_classes=3)
    b = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 5, n_classes=3, clean_spectrograms=clean)
    assert np.array_equal(a.spectrograms, b.spectrograms) and np.array_equal(a.labels, b.labels)


@pytest.mark.parametrize("workers", [2, 4])
def test_pipeline_independent_of_thread_count(workers):
    waves, devices, labels, bank = pipeline_inputs()
    cfg = AugmentConfig(p_dir=0.7, p_fms=1.0, p_mixup=1.0, patchout_bands=3)
    serial = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 99, n_classes=3)
    parallel = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 99, n_classes=3, workers=workers)
    assert np.array_equal(serial.spectrograms, parallel.spectrograms)
    assert np.array_equal(serial.labels, parallel.labels)


def test_pipeline_seed_changes_output():
    waves, devices, labels, bank = pipeline_inputs()
    cfg = AugmentConfig(p_dir=1.0, p_fms=1.0)
    a = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 1, n_classes=3)
    b = augment_batch(waves, devices, labels, bank, cfg, SMALL_FEATURES, 2, n_classes=3)
    assert not np.array_equal(a.spectrograms, b.spectrograms)


def test_pipeline_rate_mismatch():
    waves, devices, labels, bank = pipeline_inputs()
    waves[2] = Waveform(np.zeros(1024), 16000)
    with pytest.raises(SampleRateMismatch):
        augment_batch(waves, devices, labels, bank, AugmentConfig(), SMALL_FEATURES, 0, n_classes=3)
