"""Independent oracles shared by the unit and acceptance tests."""

import hashlib

import numpy as np
from scipy import signal

from devshift import dsp
from devshift.audio_io import Waveform

RATE = 22050


def loop_convolve(x, h):
    """Textbook double loop: y[n] = sum_k x[k] h[n-k]."""
    y = [0.0] * (len(x) + len(h) - 1)
    for n in range(len(y)):
        acc = 0.0
        for k in range(max(0, n - len(h) + 1), min(n, len(x) - 1) + 1):
            acc += x[k] * h[n - k]
        y[n] = acc
    return np.array(y)


def naive_dft_db(h, n_points, floor=-120.0):
    """Magnitude in dB of the DTFT of h at n_points uniform frequencies in [0, pi]."""
    w = np.linspace(0.0, np.pi, n_points)
    n = np.arange(len(h))
    mag = np.abs(np.exp(-1j * np.outer(w, n)) @ np.asarray(h))
    with np.errstate(divide="ignore"):
        return np.maximum(20 * np.log10(mag), floor)


def random_min_phase_fir(n_taps, seed):
    """Minimum-phase FIR with a decaying random response."""
    rng = np.random.default_rng(seed)
    proto = rng.standard_normal(2 * n_taps - 1) * np.exp(-np.arange(2 * n_taps - 1) / (n_taps / 4 + 1))
    h = signal.minimum_phase(np.convolve(proto, proto[::-1]), method="homomorphic")[:n_taps]
    return h / np.max(np.abs(h))


def ess_recovery_error(h, sweep_seconds, f_start=10.0, rate=RATE, ir_length=512):
    """Relative L2 error of the IR recovered by swept-sine measurement of FIR h.

    Both vectors are scaled to unit norm before comparison; the recovered taps
    are aligned on the FIR's largest tap.
    """
    f_end = rate / 2.0
    duration = dsp.synchronized_duration(f_start, f_end, sweep_seconds, rate)
    sweep, inverse = dsp.generate_ess(f_start, f_end, duration, rate)
    excitation = np.concatenate([sweep.samples, np.zeros(ir_length)])
    recorded = Waveform(np.convolve(excitation, h)[: len(excitation)], rate)
    ir = dsp.deconvolve_ess(recorded, inverse, ir_length).samples
    lead = ir_length // 8 - int(np.argmax(np.abs(h)))
    got = ir[lead : lead + len(h)]
    ref = np.asarray(h, dtype=float)
    got = got / np.linalg.norm(got)
    ref = ref / np.linalg.norm(ref)
    return float(np.linalg.norm(got - ref))


def pop_std_loop(values):
    m = sum(values) / len(values)
    return (sum((v - m) ** 2 for v in values) / len(values)) ** 0.5


# Published per-device accuracies (%) on the 2022 mobile development set; devices
# a, b, c are real, s1-s3 simulated, s4-s6 unseen.
DEVICE_GROUPS = {"a": "Real", "b": "Real", "c": "Real", "s1": "Sim", "s2": "Sim", "s3": "Sim",
                 "s4": "Unseen", "s5": "Unseen", "s6": "Unseen"}
CP_RESNET_ROW = dict(zip(DEVICE_GROUPS, [70.76, 63.20, 63.25, 56.47, 52.62, 57.57, 51.52, 48.67, 44.66]))
CP_RESNET_PUBLISHED = {"Real": 65.74, "Sim": 55.55, "Unseen": 48.28, "Overall": 56.52, "DG": 7.73}
PASST_ROW = dict(zip(DEVICE_GROUPS, [71.75, 63.38, 66.95, 57.6, 56.34, 58.44, 56.95, 57.42, 53.37]))
PASST_PUBLISHED = {"Unseen": 55.91, "Overall": 60.24, "DG": 5.60}


def predictions_for(accuracies, n_per_device=10_000):
    """Predictions, labels and devices whose per-device accuracy is exactly ``accuracies``."""
    preds, labels, devices = [], [], []
    for device, acc in accuracies.items():
        n_correct = round(acc / 100 * n_per_device)
        labels += [0] * n_per_device
        preds += [0] * n_correct + [1] * (n_per_device - n_correct)
        devices += [device] * n_per_device
    return np.array(preds), np.array(labels), devices


SMALL_LAB = ["--n-train-device-a", "14", "--n-train-per-other-seen", "2", "--n-test-per-device", "4",
             "--epochs", "2", "--batch-size", "8", "--n-irs", "3", "--ir-length", "256"]


def run_cli_pipeline(root, workers=1, extra=()):
    """Run every CLI command once in ``root``; returns the exit codes by command."""
    from devshift.audio_io import write_wav
    from devshift.cli import main

    root.mkdir(parents=True, exist_ok=True)
    base = SMALL_LAB + ["--data-dir", str(root / "data"), "--ir-bank-dir", str(root / "irs"),
                        "--out-dir", str(root / "out"), "--workers", str(workers), *extra]
    sweep, _ = dsp.generate_ess(10.0, 4000.0, 1.0, 8000)
    write_wav(sweep, root / "sweep.wav", "float32")
    write_wav(Waveform(np.convolve(sweep.samples, [0.8, 0.3, -0.1])[: len(sweep)], 8000), root / "rec.wav", "float32")
    codes = {
        "synth-dataset": main(["synth-dataset", *base]),
        "synth-irs": main(["synth-irs", *base]),
        "measure-ir": main(["measure-ir", *base, "--sweep-wav", str(root / "sweep.wav"),
                            "--recorded-wav", str(root / "rec.wav")]),
    }
    first_clip = sorted((root / "data" / "test" / "a").glob("*.wav"))[0]
    codes["augment"] = main(["augment", *base, "--inputs", str(first_clip)])
    for method in ("baseline", "dir_fms"):
        codes[f"train {method}"] = main(["train", *base, "--method", method])
        codes[f"evaluate {method}"] = main(["evaluate", *base, "--method", method])
    codes["sweep"] = main(["sweep", *base, "--sweep-p-dir", "0,0.6", "--sweep-p-fms", "0.4", "--sweep-seeds", "1"])
    codes["report"] = main(["report", *base])
    return codes


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
