"""Synthetic device-shift lab.

Parametric biquad "devices", synthetic acoustic scenes, a TAU-shaped toy
dataset (one dominant device, a few other seen devices, unseen test devices)
and a bank of synthetic device impulse responses measured by swept sine.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from . import dsp
from .audio_io import ImpulseResponse, Waveform, write_wav
from .errors import ManifestError

MANIFEST_COLUMNS = ("filename", "scene_label", "device", "split")
SPLITS = ("train", "test")
TAU_SCENES = (
    "airport", "bus", "metro", "metro_station", "park",
    "public_square", "shopping_mall", "street_pedestrian", "street_traffic", "tram",
)

# published TAU22 training-set counts: device A vs. every other seen device
TAU_DEVICE_A_CLIPS = 102150
TAU_OTHER_DEVICE_CLIPS = 7500

RESPONSE_LIMIT_DB = 24.0
DATASET_SEVERITY = 0.6
BANK_SEVERITY = 1.0
MAX_SECTION_GAIN_DB = 12.0


def stable_seed(*parts) -> int:
    """Platform-independent 63-bit seed from arbitrary hashable parts."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# --------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRow:
    file: str
    scene: str
    device: str
    split: str


@dataclass
class Manifest:
    rows: list[ManifestRow]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.rows:
            raise ManifestError("empty", "manifest has no rows")
        seen = set()
        for r in self.rows:
            for name, value in (("filename", r.file), ("scene_label", r.scene), ("device", r.device)):
                if not value:
                    raise ManifestError("invalid", f"empty {name} in row {r}")
            if r.split not in SPLITS:
                raise ManifestError("invalid", f"split must be train or test, got {r.split!r}")
            if r.file in seen:
                raise ManifestError("duplicate", f"duplicate filename {r.file!r}")
            seen.add(r.file)

    def split(self, name: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == name]

    @property
    def scenes(self) -> list[str]:
        return sorted({r.scene for r in self.rows})

    def devices(self, split: str | None = None) -> list[str]:
        return sorted({r.device for r in self.rows if split is None or r.split == split})

    def path(self, row: ManifestRow) -> Path:
        return (self.root or Path(".")) / row.file


def load_manifest(path) -> Manifest:
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ManifestError("empty", f"{path}: empty manifest")
    reader = csv.DictReader(text.splitlines(), delimiter="\t")
    header = reader.fieldnames or []
    for col in MANIFEST_COLUMNS:
        if col not in header:
            raise ManifestError("missing_column", f"{path}: missing column {col!r}")
    rows = [
        ManifestRow(rec["filename"], rec["scene_label"], rec["device"], rec["split"])
        for rec in reader
    ]
    if not rows:
        raise ManifestError("empty", f"{path}: manifest has a header but no rows")
    return Manifest(rows, root=path.parent)


def format_manifest(manifest: Manifest) -> str:
    lines = ["\t".join(MANIFEST_COLUMNS)]
    lines += [f"{r.file}\t{r.scene}\t{r.device}\t{r.split}" for r in manifest.rows]
    return "\n".join(lines) + "\n"


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(format_manifest(manifest))


# ---------------------------------------------------------------------- devices


@dataclass(frozen=True)
class DeviceFilter:
    device_id: str
    sections: tuple  # of (b0, b1, b2, a1, a2)
    gain: float = 1.0
    sample_rate_hz: int = 22050

    @property
    def sos(self) -> np.ndarray:
        return np.array([[b0, b1, b2, 1.0, a1, a2] for b0, b1, b2, a1, a2 in self.sections])


def section_is_stable(section) -> bool:
    _, _, _, a1, a2 = section
    return abs(a2) < 1.0 and abs(a1) < 1.0 + a2


def device_response_db(d: DeviceFilter, freqs_hz) -> np.ndarray:
    z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / d.sample_rate_hz)
    h = np.full(z.shape, complex(d.gain))
    for b0, b1, b2, a1, a2 in d.sections:
        h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    return 20.0 * np.log10(np.maximum(np.abs(h), 1e-12))


def _rbj(kind: str, f0: float, gain_db: float, q: float, rate: int):
    """Audio-EQ-cookbook biquad, normalized so a0 = 1."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * f0 / rate
    cw, sw = math.cos(w0), math.sin(w0)
    alpha = sw / (2.0 * q)
    if kind == "peak":
        b = (1 + alpha * a, -2 * cw, 1 - alpha * a)
        den = (1 + alpha / a, -2 * cw, 1 - alpha / a)
    else:
        sq = 2.0 * math.sqrt(a) * alpha
        if kind == "lowshelf":
            b = (a * ((a + 1) - (a - 1) * cw + sq), 2 * a * ((a - 1) - (a + 1) * cw), a * ((a + 1) - (a - 1) * cw - sq))
            den = ((a + 1) + (a - 1) * cw + sq, -2 * ((a - 1) + (a + 1) * cw), (a + 1) + (a - 1) * cw - sq)
        else:
            b = (a * ((a + 1) + (a - 1) * cw + sq), -2 * a * ((a - 1) + (a + 1) * cw), a * ((a + 1) + (a - 1) * cw - sq))
            den = ((a + 1) - (a - 1) * cw + sq, 2 * ((a - 1) - (a + 1) * cw), (a + 1) - (a - 1) * cw - sq)
    a0 = den[0]
    return (b[0] / a0, b[1] / a0, b[2] / a0, den[1] / a0, den[2] / a0)


def make_device_filter(device_id: str, rng_seed: int, severity: float, rate_hz: int = 22050) -> DeviceFilter:
    """Random cascade of 2-4 peaking/shelving biquads, deterministic in (device_id, seed).

    Section gains scale with ``severity``; the composite stays within +-24 dB of
    flat between 50 Hz and 0.9 * Nyquist.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    if severity == 0.0:
        return DeviceFilter(device_id, ((1.0, 0.0, 0.0, 0.0, 0.0),), 1.0, rate_hz)

    rng = np.random.default_rng(stable_seed("device", device_id, rng_seed))
    nyq = rate_hz / 2.0
    specs = []
    for _ in range(int(rng.integers(2, 5))):
        kind = str(rng.choice(["peak", "peak", "lowshelf", "highshelf"]))
        if kind == "peak":
            f0 = math.exp(rng.uniform(math.log(150.0), math.log(0.7 * nyq)))
            q = rng.uniform(0.5, 2.0)
        elif kind == "lowshelf":
            f0 = math.exp(rng.uniform(math.log(100.0), math.log(1000.0)))
            q = 1.0 / math.sqrt(2.0)
        else:
            f0 = math.exp(rng.uniform(math.log(2000.0), math.log(0.7 * nyq)))
            q = 1.0 / math.sqrt(2.0)
        specs.append([kind, f0, rng.uniform(-1.0, 1.0) * MAX_SECTION_GAIN_DB * severity, q])

    grid = np.geomspace(50.0, 0.9 * nyq, 512)
    while True:
        sections = tuple(_rbj(kind, f0, g, q, rate_hz) for kind, f0, g, q in specs)
        filt = DeviceFilter(device_id, sections, 1.0, rate_hz)
        worst = float(np.max(np.abs(device_response_db(filt, grid))))
        if worst <= 0.95 * RESPONSE_LIMIT_DB:
            return filt
        for s in specs:
            s[2] *= 0.9 * RESPONSE_LIMIT_DB / worst


def apply_device(w: Waveform, d: DeviceFilter) -> Waveform:
    """Cascaded biquads (transposed direct form II), then the device gain."""
    y = signal.sosfilt(d.sos, w.samples) * d.gain
    return Waveform(y, w.sample_rate_hz)


# ------------------------------------------------------------------------ scenes


# scene-profile ranges: per-class spectral tilt and class tones
SCENE_TILT_RANGE = (0.6, 1.4)
SCENE_TONE_LEVEL_RANGE = (0.02, 0.04)
CLIP_TILT_JITTER = 0.03
GOLDEN_FRACTION = (math.sqrt(5.0) - 1.0) / 2.0


def _scene_profile(scene_index: int, rate_hz: int):
    rng = np.random.default_rng(stable_seed("scene-profile", scene_index))
    # golden-ratio spacing keeps neighbouring classes apart for any scene count
    lo, hi = SCENE_TILT_RANGE
    tilt = lo + (hi - lo) * ((0.5 + scene_index * GOLDEN_FRACTION) % 1.0)
    nyq = rate_hz / 2.0
    tones = np.exp(rng.uniform(math.log(300.0), math.log(0.5 * nyq), size=2))
    tone_level = rng.uniform(*SCENE_TONE_LEVEL_RANGE, size=2)
    return tilt, tones, tone_level


def synth_scene(scene_index: int, clip_seconds: float, rate_hz: int, rng_seed: int) -> Waveform:
    """Deterministic synthetic scene: tilted noise plus two scene-specific tones.

    Peak-normalized to 0.9.
    """
    if scene_index < 0:
        raise ValueError(f"scene_index must be >= 0, got {scene_index}")
    n = int(round(clip_seconds * rate_hz))
    tilt, tones, tone_level = _scene_profile(scene_index, rate_hz)
    rng = np.random.default_rng(stable_seed("scene-clip", scene_index, rng_seed))

    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate_hz)
    shape = np.ones_like(freqs)
    shape[1:] = (freqs[1:] / 1000.0) ** (-tilt * rng.uniform(1.0 - CLIP_TILT_JITTER, 1.0 + CLIP_TILT_JITTER) / 2.0)
    shape[0] = 0.0
    noise = np.fft.irfft(spectrum * shape, n)
    noise /= np.sqrt(np.mean(noise**2)) + 1e-12

    t = np.arange(n) / rate_hz
    x = noise * rng.uniform(0.7, 1.3)
    for f, level in zip(tones, tone_level):
        amp = level * math.sqrt(2.0) * rng.uniform(0.7, 1.3)
        x = x + amp * np.sin(2.0 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
    x *= 0.9 / np.max(np.abs(x))
    return Waveform(x, rate_hz)


# ------------------------------------------------------------------ toy dataset


@dataclass
class ToyDatasetSpec:
    n_scenes: int = 3
    clip_seconds: float = 0.5
    sample_rate_hz: int = 22050
    seen_devices: list = field(default_factory=list)
    unseen_devices: list = field(default_factory=list)
    n_train_device_a: int = 272
    n_train_per_other_seen: int = 20
    n_test_per_device: int = 60
    seed: int = 0

    def __post_init__(self):
        if not self.seen_devices:
            raise ValueError("at least one seen device (device 'a') is required")
        seen = {d.device_id for d in self.seen_devices}
        unseen = {d.device_id for d in self.unseen_devices}
        if seen & unseen:
            raise ValueError(f"seen and unseen devices overlap: {sorted(seen & unseen)}")
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")


def default_toy_spec(
    seed: int = 0,
    n_train_device_a: int = 272,
    n_train_per_other_seen: int = 20,
    n_test_per_device: int = 60,
    n_scenes: int = 3,
    clip_seconds: float = 0.5,
    sample_rate_hz: int = 22050,
    seen: tuple = ("a", "b", "c"),
    unseen: tuple = ("s4", "s5", "s6"),
    severity: float = DATASET_SEVERITY,
) -> ToyDatasetSpec:
    """TAU-shaped layout: dominant device 'a', other seen devices, unseen test devices."""
    make = lambda name: make_device_filter(name, seed, severity, sample_rate_hz)  # noqa: E731
    return ToyDatasetSpec(
        n_scenes=n_scenes,
        clip_seconds=clip_seconds,
        sample_rate_hz=sample_rate_hz,
        seen_devices=[make(d) for d in seen],
        unseen_devices=[make(d) for d in unseen],
        n_train_device_a=n_train_device_a,
        n_train_per_other_seen=n_train_per_other_seen,
        n_test_per_device=n_test_per_device,
        seed=seed,
    )


def scene_names(n_scenes: int) -> list[str]:
    if n_scenes <= len(TAU_SCENES):
        return list(TAU_SCENES[:n_scenes])
    return [f"scene{k:02d}" for k in range(n_scenes)]


def toy_dataset_plan(spec: ToyDatasetSpec) -> list[tuple[ManifestRow, DeviceFilter, int, int]]:
    """(row, device, scene_index, clip_seed) for every clip, in manifest order."""
    names = scene_names(spec.n_scenes)
    plan = []
    clip_index = 0

    def add(split, device, count):
        nonlocal clip_index
        for k in range(count):
            scene = k % spec.n_scenes
            rel = f"{split}/{device.device_id}/{names[scene]}_{clip_index}.wav"
            seed = stable_seed("clip", spec.seed, clip_index)
            plan.append((ManifestRow(rel, names[scene], device.device_id, split), device, scene, seed))
            clip_index += 1

    for i, device in enumerate(spec.seen_devices):
        add("train", device, spec.n_train_device_a if i == 0 else spec.n_train_per_other_seen)
    for device in list(spec.seen_devices) + list(spec.unseen_devices):
        add("test", device, spec.n_test_per_device)
    return plan


def render_clip(spec: ToyDatasetSpec, device: DeviceFilter, scene: int, seed: int) -> Waveform:
    clean = synth_scene(scene, spec.clip_seconds, spec.sample_rate_hz, seed)
    return apply_device(clean, device)


def build_toy_dataset(spec: ToyDatasetSpec, out_dir) -> Manifest:
    """Render every clip to ``<out_dir>/<split>/<device>/<scene>_<index>.wav`` plus manifest.tsv."""
    out_dir = Path(out_dir)
    rows = []
    for row, device, scene, seed in toy_dataset_plan(spec):
        write_wav(render_clip(spec, device, scene, seed), out_dir / row.file, encoding="float32")
        rows.append(row)
    manifest = Manifest(rows, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.tsv")
    return manifest


# ---------------------------------------------------------------------- DIR bank

BANK_SWEEP_START_HZ = 10.0
BANK_SWEEP_SECONDS = 4.0


def measure_device_ir(d: DeviceFilter, ir_length: int, name: str | None = None,
                      sweep_seconds: float = BANK_SWEEP_SECONDS) -> ImpulseResponse:
    """Swept-sine measurement of a synthetic device."""
    rate = d.sample_rate_hz
    f_end = rate / 2.0
    duration = dsp.synchronized_duration(BANK_SWEEP_START_HZ, f_end, sweep_seconds, rate)
    sweep, inverse = dsp.generate_ess(BANK_SWEEP_START_HZ, f_end, duration, rate)
    excitation = Waveform(np.concatenate([sweep.samples, np.zeros(ir_length)]), rate)
    recorded = apply_device(excitation, d)
    return dsp.deconvolve_ess(recorded, inverse, ir_length, name or d.device_id)


def bank_device_filters(n_irs: int, rate_hz: int, rng_seed: int, severity: float = BANK_SEVERITY):
    return [make_device_filter(f"mic{k:02d}", stable_seed("bank", rng_seed, k), severity, rate_hz)
            for k in range(n_irs)]


def synth_dir_bank(n_irs: int = 66, ir_length: int = 4096, rate_hz: int = 22050,
                   rng_seed: int = 0, out_dir=None, severity: float = BANK_SEVERITY) -> list[ImpulseResponse]:
    """Measure ``n_irs`` random synthetic microphones; optionally write ``micNN.wav`` files."""
    if n_irs < 1:
        raise ValueError(f"n_irs must be >= 1, got {n_irs}")
    bank = [measure_device_ir(d, ir_length) for d in bank_device_filters(n_irs, rate_hz, rng_seed, severity)]
    if out_dir is not None:
        out_dir = Path(out_dir)
        for ir in bank:
            write_wav(Waveform(ir.samples, ir.sample_rate_hz), out_dir / f"{ir.name}.wav", encoding="float32")
    return bank
