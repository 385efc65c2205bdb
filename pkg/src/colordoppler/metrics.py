"""Masked error metrics, aliasing bookkeeping and CSV reports."""

from __future__ import annotations

import csv
import io
from collections import defaultdict

import numpy as np


def _masked(a, b, mask):
    a, b, mask = np.asarray(a, float), np.asarray(b, float), np.asarray(mask, bool)
    if a.shape != b.shape or mask.shape != a.shape:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, {mask.shape}")
    if not mask.any():
        raise ValueError("mask selects no pixels")
    return a[mask] - b[mask]


def masked_rmse(pred, truth, mask) -> float:
    """Root mean squared error over the masked pixels."""
    d = _masked(pred, truth, mask)
    return float(np.sqrt(np.mean(d * d)))


def masked_rmsd(pred, reference, mask) -> float:
    """Root mean squared difference to a reference estimate (e.g. the autocorrelator)."""
    return masked_rmse(pred, reference, mask)


def aliased_pixels(truth, mask, nyquist_mps: float) -> np.ndarray:
    """Masked pixels whose true speed exceeds the Nyquist limit."""
    return np.asarray(mask, bool) & (np.abs(truth) > nyquist_mps)


def wrap_velocity(v, nyquist_mps: float):
    """Velocity an ideal phase estimator reports: ``v`` folded into ``[-v_N, v_N)``."""
    return np.mod(np.asarray(v, float) + nyquist_mps, 2 * nyquist_mps) - nyquist_mps


def sample_metrics(pred, truth, mask, nyquist_mps, reference=None) -> dict:
    """RMSE overall and on aliased pixels, plus RMSD to ``reference`` when given.

    Metrics that are undefined (no aliased pixels) are reported as ``None``.
    """
    alias = aliased_pixels(truth, mask, nyquist_mps)
    row = {
        "pixels": int(np.count_nonzero(mask)),
        "aliased_pixels": int(np.count_nonzero(alias)),
        "rmse": masked_rmse(pred, truth, mask),
        "rmse_aliased": masked_rmse(pred, truth, alias) if alias.any() else None,
    }
    if reference is not None:
        row["rmsd"] = masked_rmsd(pred, reference, mask)
    return row


def rmse_vs_speed(rows, speed_key="v_max_mps", value_key="rmse") -> list[dict]:
    """Mean and standard deviation of ``value_key`` grouped by ``speed_key``, sorted by speed."""
    groups = defaultdict(list)
    for r in rows:
        if r.get(speed_key) is not None:
            groups[float(r[speed_key])].append(float(r[value_key]))
    return [
        {speed_key: s, "samples": len(v), f"{value_key}_mean": float(np.mean(v)), f"{value_key}_std": float(np.std(v))}
        for s, v in sorted(groups.items())
    ]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def rows_to_csv(rows, columns=None) -> bytes:
    """Deterministic CSV: fixed column order, floats with 9 significant digits, ``\\n`` line ends."""
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return out.getvalue().encode()
