"""Velocity map files and binary PPM heatmaps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import DataError, VelocityMap, atomic_write_bytes, canonical_json


def diverging_rgb(values, nyquist_mps: float) -> np.ndarray:
    """Blue (``-v_N``) to white (0) to red (``+v_N``); values beyond the range are clipped.

    Non-finite values are drawn black.
    """
    if nyquist_mps <= 0:
        raise ValueError("Nyquist velocity must be > 0")
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    t = np.clip(np.where(finite, v, 0.0) / nyquist_mps, -1.0, 1.0)
    fade = np.rint(255 * (1 - np.abs(t))).astype(np.uint8)
    full = np.full(v.shape, 255, np.uint8)
    rgb = np.stack(
        [np.where(t > 0, full, fade), fade, np.where(t < 0, full, fade)],
        axis=-1,
    )
    rgb[~finite] = 0
    return rgb


def ppm_bytes(values, nyquist_mps: float) -> bytes:
    """Binary (P6) portable pixmap of a velocity map; rows are depth, columns are beams."""
    rgb = diverging_rgb(values, nyquist_mps)
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_ppm(path, values, nyquist_mps: float) -> None:
    atomic_write_bytes(Path(path), ppm_bytes(values, nyquist_mps))


def write_velocity_map(stem, vmap: VelocityMap) -> None:
    """``stem.bin`` holds little-endian float32 ``[h][w]`` values; ``stem.json`` the header."""
    stem = Path(stem)
    h, w = vmap.values.shape
    atomic_write_bytes(stem.with_suffix(".bin"), np.asarray(vmap.values, "<f4").tobytes())
    header = {"h": h, "w": w, "nyquist_mps": vmap.nyquist_mps, "valid": np.asarray(vmap.valid).astype(int).tolist()}
    atomic_write_bytes(stem.with_suffix(".json"), canonical_json(header))


def read_velocity_map(stem) -> VelocityMap:
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    try:
        header = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        h, w, v_n = int(header["h"]), int(header["w"]), float(header["nyquist_mps"])
        raw = stem.with_suffix(".bin").read_bytes()
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{stem}: unreadable velocity map ({exc})") from exc
    if len(raw) != 4 * h * w:
        raise DataError(f"{stem}.bin: {len(raw)} bytes, expected {4 * h * w}")
    values = np.frombuffer(raw, "<f4").reshape(h, w).astype(np.float64)
    valid = np.asarray(header.get("valid", np.ones((h, w))), bool)
    return VelocityMap(values, v_n, valid)
