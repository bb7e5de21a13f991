"""PM/GM evaluation and plot-ready whitespace-separated .dat emission.

A .dat file holds one header line of unique column names (the round column
is always "GR") followed by one row per record. Floats are printed with six
significant digits, which makes write -> parse -> write byte-stable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EvaluationError

__all__ = [
    "MetricsRecord",
    "evaluate_pm",
    "evaluate_gm",
    "write_dat",
    "write_table",
    "parse_dat",
    "format_float",
    "write_manifest",
]


@dataclass
class MetricsRecord:
    t: int
    pm_acc: float = 0.0
    gm_acc: float = 0.0
    pm_loss: float = 0.0
    gm_loss: float = 0.0
    pm_acc_weighted: float = 0.0
    wall_time: float = 0.0

    def __post_init__(self):
        for name in ("pm_acc", "gm_acc", "pm_acc_weighted"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigurationError(f"{name}={v} outside [0, 1]")


def _accuracy_and_loss(model, theta, batch):
    pred = model.predict(theta, batch.features)
    acc = float(np.mean(pred == batch.labels))
    return acc, model.loss(theta, batch)


def evaluate_pm(devices, model) -> tuple:
    """Device-uniform mean of per-device validation accuracy and loss,
    each device scored under its own personalized parameters.

    ``devices`` is an iterable of objects carrying .theta and .val (a Batch).
    """
    accs, losses = [], []
    for dev in sorted(devices, key=lambda d: d.device_id):
        if dev.val is None or len(dev.val) == 0:
            raise EvaluationError(f"device {dev.device_id} has no validation set")
        acc, loss = _accuracy_and_loss(model, dev.theta, dev.val)
        accs.append(acc)
        losses.append(loss)
    if not accs:
        raise EvaluationError("no devices to evaluate")
    return float(np.mean(accs)), float(np.mean(losses))


def evaluate_pm_weighted(devices, model) -> tuple:
    """Sample-count-weighted variant of evaluate_pm."""
    accs, losses, weights = [], [], []
    for dev in sorted(devices, key=lambda d: d.device_id):
        if dev.val is None or len(dev.val) == 0:
            raise EvaluationError(f"device {dev.device_id} has no validation set")
        acc, loss = _accuracy_and_loss(model, dev.theta, dev.val)
        accs.append(acc)
        losses.append(loss)
        weights.append(len(dev.val))
    w = np.asarray(weights, dtype=np.float64)
    w /= w.sum()
    return float(np.asarray(accs) @ w), float(np.asarray(losses) @ w)


def evaluate_gm(x, devices, model) -> tuple:
    """Accuracy/loss of the global parameters on the pooled validation set."""
    feats, labs = [], []
    for dev in sorted(devices, key=lambda d: d.device_id):
        if dev.val is None or len(dev.val) == 0:
            raise EvaluationError(f"device {dev.device_id} has no validation set")
        feats.append(dev.val.features)
        labs.append(dev.val.labels)
    from .models import Batch

    pooled = Batch(np.concatenate(feats, axis=0), np.concatenate(labs))
    return _accuracy_and_loss(model, x, pooled)


def format_float(value: float) -> str:
    return format(float(value), "#.6g")


def _validate_columns(names):
    if len(set(names)) != len(names):
        raise ConfigurationError("duplicate column names in .dat header")
    for name in names:
        if any(ch.isspace() for ch in name):
            raise ConfigurationError(f"column name {name!r} contains whitespace")


def write_table(path, header, rows):
    """Write a generic .dat table. Columns named GR are printed as integers."""
    _validate_columns(list(header))
    gr_cols = {i for i, name in enumerate(header) if name == "GR"}
    lines = [" ".join(header)]
    for row in rows:
        cells = []
        for i, v in enumerate(row):
            cells.append(str(int(v)) if i in gr_cols else format_float(v))
        lines.append(" ".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_dat(records, columns, path):
    """Serialize MetricsRecords. ``columns`` maps output column name to a
    MetricsRecord field (sequence of (name, field) pairs or a mapping);
    the field for "GR" is the round index ``t``."""
    if isinstance(columns, dict):
        pairs = list(columns.items())
    else:
        pairs = [tuple(p) for p in columns]
    names = [name for name, _ in pairs]
    _validate_columns(names)
    rows = []
    for rec in records:
        rows.append([getattr(rec, fieldname) for _, fieldname in pairs])
    write_table(path, names, rows)


def parse_dat(path):
    """Read a .dat file back as (header list, list of float rows)."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise ConfigurationError(f"{path}: empty .dat file")
    header = text[0].split()
    rows = []
    for line in text[1:]:
        if not line.strip():
            continue
        cells = line.split()
        if len(cells) != len(header):
            raise ConfigurationError(f"{path}: row width {len(cells)} != header width {len(header)}")
        rows.append([float(c) for c in cells])
    return header, rows


def write_manifest(path, entries: dict):
    """Deterministic key=value manifest (sorted keys)."""
    lines = [f"{k}={entries[k]}" for k in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
