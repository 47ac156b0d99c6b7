"""Per-device accuracy, DG-Score and per-method comparison tables."""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

GROUPS = ("Real", "Sim", "Unseen")


@dataclass
class EvalReport:
    per_device_acc: dict[str, float]
    group_acc: dict[str, float]
    overall_acc: float
    dg_score: float


def natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def per_device_accuracy(predictions, labels, devices) -> dict[str, float]:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    devices = np.asarray(devices, dtype=object)
    if not len(predictions) == len(labels) == len(devices):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions, {len(labels)} labels, {len(devices)} devices"
        )
    if len(predictions) == 0:
        raise ValueError("cannot score an empty prediction set")
    correct = predictions == labels
    return {
        d: 100.0 * float(np.mean(correct[devices == d]))
        for d in sorted(set(devices.tolist()), key=natural_key)
    }


def dg_score(accuracies) -> float:
    """Population standard deviation of device accuracies."""
    acc = np.asarray(list(accuracies), dtype=np.float64)
    if acc.size == 0:
        raise ValueError("dg_score needs at least one accuracy")
    return float(np.sqrt(np.mean((acc - acc.mean()) ** 2)))


def report_from_accuracies(per_device: dict[str, float], device_groups: dict[str, str]) -> EvalReport:
    missing = [d for d in per_device if d not in device_groups]
    if missing:
        raise KeyError(f"device {missing[0]!r} has no group assignment")
    group_acc = {}
    for g in GROUPS:
        members = [per_device[d] for d in per_device if device_groups[d] == g]
        if members:
            group_acc[g] = float(np.mean(members))
    values = list(per_device.values())
    return EvalReport(dict(per_device), group_acc, float(np.mean(values)), dg_score(values))


def build_report(predictions, labels, devices, device_groups: dict[str, str]) -> EvalReport:
    return report_from_accuracies(per_device_accuracy(predictions, labels, devices), device_groups)


# ------------------------------------------------------------------- rendering


def fmt2(x: float) -> str:
    """Two decimals, halves rounded away from zero (7.725 -> 7.73)."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report_columns(reports) -> list[str]:
    devices = sorted({d for r in reports for d in r.per_device_acc}, key=natural_key)
    groups = [g for g in GROUPS if any(g in r.group_acc for r in reports)]
    return devices + groups + ["Overall", "DG"]


def report_cells(r: EvalReport, columns) -> list[str]:
    values = dict(r.per_device_acc)
    values.update(r.group_acc)
    values["Overall"] = r.overall_acc
    values["DG"] = r.dg_score
    return [fmt2(values[c]) if c in values else "" for c in columns]


def format_table(named_reports, style: str = "tsv") -> str:
    """Render (name, report) pairs as one table, one row per report."""
    named_reports = list(named_reports)
    columns = report_columns([r for _, r in named_reports])
    header = ["Method"] + columns
    body = [[name] + report_cells(r, columns) for name, r in named_reports]
    if style == "tsv":
        return "\n".join("\t".join(row) for row in [header] + body) + "\n"
    if style == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + ["---:"] * len(columns)) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown style {style!r}; expected 'tsv' or 'markdown'")


def format_report(r: EvalReport, style: str = "tsv", name: str = "model") -> str:
    return format_table([(name, r)], style)


def parse_report_tsv(text: str) -> list[tuple[str, EvalReport]]:
    """Inverse of ``format_table(..., 'tsv')``; values carry two-decimal precision."""
    lines = [line for line in text.splitlines() if line.strip()]
    header = lines[0].split("\t")
    if header[0] != "Method" or header[-2:] != ["Overall", "DG"]:
        raise ValueError("not a report table")
    out = []
    for line in lines[1:]:
        cells = line.split("\t")
        name, values = cells[0], dict(zip(header[1:], cells[1:]))
        per_device = {c: float(v) for c, v in values.items() if c not in GROUPS + ("Overall", "DG") and v}
        groups = {g: float(values[g]) for g in GROUPS if values.get(g)}
        out.append((name, EvalReport(per_device, groups, float(values["Overall"]), float(values["DG"]))))
    return out
