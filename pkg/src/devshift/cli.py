"""``devshift`` command line: ``devshift <command> [--config FILE] [--key value ...]``.

Configuration is a flat ``key = value`` file (``#`` starts a comment);
``--key value`` flags override the file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from . import dsp
from .audio_io import ImpulseResponse, Waveform, read_wav, write_wav
from .augment import AugmentConfig, dir_augment, load_ir_bank
from .dataset_sim import build_toy_dataset, default_toy_spec, load_manifest, stable_seed, synth_dir_bank
from .errors import ConfigError, DevshiftError
from .evaluation import EvalReport, build_report, format_table, parse_report_tsv
from .features import PRESETS, FeatureConfig
from .model import SplitData, TrainConfig, load_model, load_split, predict, save_model, train_on

log = logging.getLogger("devshift")

COMMANDS = ("measure-ir", "augment", "synth-dataset", "synth-irs", "train", "evaluate", "sweep", "report")
METHODS = ("baseline", "mixup", "dir", "fms", "dir_fms")


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    method: str = "dir_fms"
    preset: str = "cnn"
    seed: int = 0
    workers: int = 1
    # augmentation
    p_dir: float = 0.6
    p_fms: float = 0.4
    alpha_fms: float = 0.4
    alpha_mixup: float = 0.3
    p_mixup: float = 1.0
    source_device: str = "a"
    patchout_bands: int = 0
    patchout_band_height: int = 1
    dir_all_devices: bool = False
    # training
    epochs: int = 50
    batch_size: int = 64
    peak_lr: float = 0.1
    warmup_frac: float = 0.08
    finetune_frac: float = 0.1
    final_lr_factor: float = 0.01
    weight_decay: float = 1e-3
    # toy dataset
    n_scenes: int = 3
    clip_seconds: float = 0.5
    n_train_device_a: int = 272
    n_train_per_other_seen: int = 20
    n_test_per_device: int = 60
    seen_devices: tuple = ("a", "b", "c")
    unseen_devices: tuple = ("s4", "s5", "s6")
    device_severity: float = 0.6
    device_groups: str = ""
    # DIR bank
    n_irs: int = 66
    ir_length: int = 4096
    bank_severity: float = 1.0
    # swept-sine measurement
    sweep_wav: str = ""
    recorded_wav: str = ""
    ess_f_start: float = 10.0
    ess_f_end: float = 0.0
    # augment command
    inputs: tuple = ()
    # sweep command
    sweep_p_dir: tuple = (0.0, 0.2, 0.4, 0.6, 0.8)
    sweep_p_fms: tuple = (0.0, 0.2, 0.4, 0.6)
    sweep_seeds: int = 3
    # paths
    ir_bank_dir: str = "irs"
    data_dir: str = "data"
    out_dir: str = "out"

    # ------------------------------------------------------------------ views

    @property
    def feature_config(self) -> FeatureConfig:
        return PRESETS[self.preset]

    def augment_config(self) -> AugmentConfig:
        p_dir, p_fms, p_mixup = self.p_dir, self.p_fms, self.p_mixup
        if self.method == "baseline":
            p_dir = p_fms = p_mixup = 0.0
        elif self.method == "mixup":
            p_dir = p_fms = 0.0
        elif self.method == "dir":
            p_fms = p_mixup = 0.0
        elif self.method == "fms":
            p_dir = p_mixup = 0.0
        else:
            p_mixup = 0.0
        return AugmentConfig(
            p_dir=p_dir, p_fms=p_fms, alpha_fms=self.alpha_fms, alpha_mixup=self.alpha_mixup,
            p_mixup=p_mixup, source_device=self.source_device, patchout_bands=self.patchout_bands,
            patchout_band_height=self.patchout_band_height, dir_all_devices=self.dir_all_devices,
            seed=self.seed,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, peak_lr=self.peak_lr,
            warmup_frac=self.warmup_frac, finetune_frac=self.finetune_frac,
            final_lr_factor=self.final_lr_factor, weight_decay=self.weight_decay,
            seed=self.seed if seed is None else seed,
        )

    def groups(self) -> dict[str, str]:
        if self.device_groups:
            out = {}
            for item in _str_list(self.device_groups):
                device, _, group = item.partition(":")
                if group not in ("Real", "Sim", "Unseen"):
                    raise ConfigError("device_groups", f"group for {device!r} must be Real, Sim or Unseen")
                out[device.strip()] = group
            return out
        return {**{d: "Real" for d in self.seen_devices}, **{d: "Unseen" for d in self.unseen_devices}}

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {', '.join(METHODS)}")
        if self.preset not in PRESETS:
            raise ConfigError("preset", f"must be one of {', '.join(PRESETS)}")
        for key in ("p_dir", "p_fms", "p_mixup", "device_severity", "bank_severity"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(key, f"value {getattr(self, key)} outside [0, 1]")
        for key in ("sweep_p_dir", "sweep_p_fms"):
            if not getattr(self, key) or any(not 0.0 <= v <= 1.0 for v in getattr(self, key)):
                raise ConfigError(key, "needs at least one value, all within [0, 1]")
        for key in ("alpha_fms", "alpha_mixup", "clip_seconds", "peak_lr"):
            if getattr(self, key) <= 0.0:
                raise ConfigError(key, "must be > 0")
        for key in ("workers", "batch_size", "n_irs", "ir_length", "n_scenes", "sweep_seeds", "patchout_band_height"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        for key in ("epochs", "patchout_bands", "n_train_device_a", "n_train_per_other_seen", "n_test_per_device"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be >= 0")
        if self.warmup_frac + self.finetune_frac >= 1.0 or min(self.warmup_frac, self.finetune_frac) < 0.0:
            raise ConfigError("warmup_frac", "warmup_frac and finetune_frac must be >= 0 and sum below 1")
        if self.method in ("dir", "dir_fms") and self.p_dir == 0.0:
            raise ConfigError("p_dir", f"method {self.method} needs p_dir > 0")
        if self.method in ("fms", "dir_fms") and self.p_fms == 0.0:
            raise ConfigError("p_fms", f"method {self.method} needs p_fms > 0")
        if self.method == "mixup" and self.p_mixup == 0.0:
            raise ConfigError("p_mixup", "method mixup needs p_mixup > 0")
        if set(self.seen_devices) & set(self.unseen_devices):
            raise ConfigError("unseen_devices", "seen and unseen device ids overlap")
        if not self.seen_devices:
            raise ConfigError("seen_devices", "at least one seen device is required")
        self.groups()
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    default = _FIELDS[key].default
    try:
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _float_list(raw) if key.startswith("sweep_p_") else _str_list(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None


def read_config_file(path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(key.strip() or f"line {n}", f"{path}:{n}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    raw = dict(read_config_file(path)) if path else {}
    raw.update(overrides or {})
    values = {}
    for key, text in raw.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _coerce(key, text)
    return RunConfig(**values).validate()


def _parse_overrides(tokens: list[str]) -> dict[str, str]:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(tok, "expected --key value")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(key, "missing value")
            value = tokens[i + 1]
            i += 2
        out[key] = value
    return out


# --------------------------------------------------------------------- commands


def _out(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _bank(cfg: RunConfig, aug: AugmentConfig) -> list[ImpulseResponse]:
    if aug.p_dir == 0.0:
        return []
    return load_ir_bank(cfg.ir_bank_dir, cfg.feature_config.sample_rate_hz)


def cmd_synth_dataset(cfg: RunConfig) -> list[Path]:
    spec = default_toy_spec(
        seed=cfg.seed, n_train_device_a=cfg.n_train_device_a, n_train_per_other_seen=cfg.n_train_per_other_seen,
        n_test_per_device=cfg.n_test_per_device, n_scenes=cfg.n_scenes, clip_seconds=cfg.clip_seconds,
        sample_rate_hz=cfg.feature_config.sample_rate_hz, seen=cfg.seen_devices, unseen=cfg.unseen_devices,
        severity=cfg.device_severity,
    )
    manifest = build_toy_dataset(spec, cfg.data_dir)
    return [Path(cfg.data_dir) / "manifest.tsv"] + [manifest.path(r) for r in manifest.rows]


def cmd_synth_irs(cfg: RunConfig) -> list[Path]:
    bank = synth_dir_bank(cfg.n_irs, cfg.ir_length, cfg.feature_config.sample_rate_hz, cfg.seed,
                          cfg.ir_bank_dir, cfg.bank_severity)
    return [Path(cfg.ir_bank_dir) / f"{ir.name}.wav" for ir in bank]


def cmd_measure_ir(cfg: RunConfig) -> list[Path]:
    if not cfg.sweep_wav or not cfg.recorded_wav:
        raise ConfigError("sweep_wav" if not cfg.sweep_wav else "recorded_wav", "required by measure-ir")
    sweep = read_wav(cfg.sweep_wav)
    recorded = read_wav(cfg.recorded_wav)
    f_end = cfg.ess_f_end or sweep.sample_rate_hz / 2.0
    _, inverse = dsp.generate_ess(cfg.ess_f_start, f_end, sweep.duration_s, sweep.sample_rate_hz)
    ir = dsp.deconvolve_ess(recorded, inverse, cfg.ir_length, Path(cfg.recorded_wav).stem)
    path = _out(cfg) / f"{ir.name}_ir.wav"
    write_wav(Waveform(ir.samples, ir.sample_rate_hz), path, encoding="float32")
    return [path]


def cmd_augment(cfg: RunConfig) -> list[Path]:
    if not cfg.inputs:
        raise ConfigError("inputs", "augment needs a comma-separated list of WAV files")
    out = _out(cfg) / "augmented"
    aug = dataclasses.replace(cfg.augment_config(), p_dir=cfg.p_dir)
    written = []
    for i, src in enumerate(cfg.inputs):
        w = read_wav(src)
        bank = load_ir_bank(cfg.ir_bank_dir, w.sample_rate_hz)
        rng = np.random.default_rng(stable_seed("augment-cli", cfg.seed, i))
        y = dir_augment(w, aug.source_device, bank, aug, rng)
        path = out / Path(src).name
        write_wav(y, path, encoding="float32")
        written.append(path)
    return written


def _load_data(cfg: RunConfig):
    manifest = load_manifest(Path(cfg.data_dir) / "manifest.tsv")
    return manifest, manifest.scenes


def cmd_train(cfg: RunConfig) -> list[Path]:
    manifest, classes = _load_data(cfg)
    if not manifest.split("train"):
        raise ConfigError("data_dir", "manifest has no train split")
    aug = cfg.augment_config()
    data = load_split(manifest, "train", cfg.feature_config, classes)
    losses = []
    params = train_on(data, _bank(cfg, aug), aug, cfg.feature_config, cfg.train_config(),
                      on_epoch=lambda e, loss: losses.append((e, loss)), workers=cfg.workers)
    out = _out(cfg)
    model_path = out / f"model_{cfg.method}.txt"
    log_path = out / f"train_log_{cfg.method}.tsv"
    save_model(params, model_path)
    log_path.write_text("epoch\tloss\n" + "".join(f"{e}\t{loss!r}\n" for e, loss in losses))
    return [model_path, log_path]


def _write_report(out: Path, stem: str, named) -> list[Path]:
    tsv, md = out / f"{stem}.tsv", out / f"{stem}.md"
    tsv.write_text(format_table(named, "tsv"))
    md.write_text(format_table(named, "markdown"))
    return [tsv, md]


def _evaluate(params, data: SplitData, groups) -> EvalReport:
    missing = sorted({d for d in data.devices if d not in groups})
    if missing:
        raise ConfigError("device_groups", f"test device {missing[0]!r} is not assigned to a group")
    return build_report(predict(params, data), data.class_ids, data.devices, groups)


def cmd_evaluate(cfg: RunConfig) -> list[Path]:
    manifest, classes = _load_data(cfg)
    groups = cfg.groups()
    missing = sorted({r.device for r in manifest.split("test")} - set(groups))
    if missing:
        raise ConfigError("device_groups", f"test device {missing[0]!r} is not assigned to a group")
    params = load_model(_out(cfg) / f"model_{cfg.method}.txt")
    data = load_split(manifest, "test", cfg.feature_config, classes)
    report = _evaluate(params, data, groups)
    return _write_report(_out(cfg), f"report_{cfg.method}", [(cfg.method, report)])


def cmd_sweep(cfg: RunConfig) -> list[Path]:
    manifest, classes = _load_data(cfg)
    groups = cfg.groups()
    fcfg = cfg.feature_config
    train_data = load_split(manifest, "train", fcfg, classes)
    test_data = load_split(manifest, "test", fcfg, classes)
    needs_bank = any(p > 0.0 for p in cfg.sweep_p_dir)
    bank = load_ir_bank(cfg.ir_bank_dir, fcfg.sample_rate_hz) if needs_bank else []
    lines = ["p_dir\tp_fms\tunseen_acc\toverall_acc"]
    for p_dir, p_fms in itertools.product(cfg.sweep_p_dir, cfg.sweep_p_fms):
        unseen, overall = [], []
        for k in range(cfg.sweep_seeds):
            seed = cfg.seed + k
            aug = dataclasses.replace(cfg.augment_config(), p_dir=p_dir, p_fms=p_fms, p_mixup=0.0, seed=seed)
            params = train_on(train_data, bank, aug, fcfg, cfg.train_config(seed), workers=cfg.workers)
            report = _evaluate(params, test_data, groups)
            unseen.append(report.group_acc.get("Unseen", float("nan")))
            overall.append(report.overall_acc)
        lines.append(f"{p_dir:g}\t{p_fms:g}\t{np.mean(unseen):.4f}\t{np.mean(overall):.4f}")
        log.info("sweep cell p_dir=%g p_fms=%g done", p_dir, p_fms)
    path = _out(cfg) / "sweep.tsv"
    path.write_text("\n".join(lines) + "\n")
    return [path]


def cmd_report(cfg: RunConfig) -> list[Path]:
    out = _out(cfg)
    named = []
    for method in METHODS:
        path = out / f"report_{method}.tsv"
        if path.exists():
            named.extend(parse_report_tsv(path.read_text()))
    if not named:
        raise ConfigError("out_dir", f"no report_<method>.tsv files in {out}")
    return _write_report(out, "comparison", named)


HANDLERS = {
    "measure-ir": cmd_measure_ir,
    "augment": cmd_augment,
    "synth-dataset": cmd_synth_dataset,
    "synth-irs": cmd_synth_irs,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def run(command: str, cfg: RunConfig) -> list[Path]:
    """Execute one command; returns the artifact paths it wrote."""
    if command not in HANDLERS:
        raise ConfigError("command", f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    return HANDLERS[command](cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="devshift", description="Device-robustness toolkit for audio classification.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config, _parse_overrides(rest))
        written = run(args.command, cfg)
    except (DevshiftError, OSError, ValueError, KeyError) as exc:
        print(f"devshift {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if len(written) > 10:
        log.info("wrote %d files, first %s", len(written), written[0])
    else:
        for path in written:
            log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
