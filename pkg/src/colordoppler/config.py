"""INI configuration for the command-line pipeline.

Every key is declared in :data:`SCHEMA`; unknown sections or keys are
rejected with their line number. Angles are given in degrees in the file and
converted to radians here.
"""

from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .acquire import resolution_cell_area_m2
from .augment import Scene
from .core import AcquisitionParams, ConfigError, ScanGeometry
from .nn.train import TrainConfig

REQUIRED = object()


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _floats(text):
    return [_float(t) for t in text.replace(",", " ").split()]


def _optional_float(text):
    return None if text.strip().lower() in ("", "none") else _float(text)


SCHEMA = {
    "acquisition": {
        "center_frequency_hz": (_float, 2.7e6),
        "prf_hz": (_float, 6000.0),
        "sound_speed_mps": (_float, 1540.0),
        "packet_size": (int, 8),
        "firings": (int, 40),
        "fast_time_samples": (int, 180),
        "cycles_doppler": (int, 6),
        "bandwidth_frac": (_float, 0.74),
        "element_count": (int, 64),
        "pitch_m": (_float, 300e-6),
    },
    "geometry": {
        "depth_min_m": (_float, REQUIRED),
        "depth_max_m": (_float, REQUIRED),
        "sector_width_deg": (_float, 50.0),
        "center_angle_deg": (_float, 0.0),
    },
    "phantom": {
        "kind": (str, "disk"),
        "center_range_m": (_float, 0.08),
        "center_angle_deg": (_float, 0.0),
        "radius_m": (_float, 0.03),
        "v_max_mps": (_floats, [0.45]),
        "v_max_sweep": (_floats, None),
        "clockwise": (_bool, False),
        "center_x_m": (_float, 0.0),
        "center_z_m": (_float, 0.06),
        "circulation_m2_s": (_float, 0.1),
        "core_radius_m": (_float, 0.008),
        "support_radius_m": (_float, 0.02),
        "scatterers_per_cell": (_float, 10.0),
        "density_per_mm2": (_optional_float, None),
        "fluctuation_frac": (_float, 0.1),
    },
    "simulation": {
        "seed": (int, 0),
        "snr_db": (_float, math.inf),
        "repeats": (int, 1),
    },
    "augment": {
        "zoom_ratio": (_float, 1.5),
        "zoom_count": (int, 1),
        "flip": (_bool, True),
        "alias_count": (int, 1),
        "alias_factor_min": (_float, 0.4),
        "alias_factor_max": (_float, 0.6),
        "max_low_fraction": (_float, 0.7),
    },
    "train": {
        "kind": (str, "real_unet"),
        "batch_size": (int, 16),
        "lr": (_float, 1e-3),
        "weight_decay": (_float, 1e-2),
        "patience": (int, 10),
        "factor": (_float, 0.1),
        "min_lr": (_float, 1e-6),
        "folds": (int, 9),
        "val_fraction": (_float, 0.1),
        "epochs": (int, 100),
        "packet": (int, 2),
        "start_k": (int, 0),
    },
}

SEED_ENV = "DOPPLER_SEED"
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:\s#;\[][^=:]*?)\s*[=:]")


def _line_numbers(text: str) -> dict:
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


@dataclass(frozen=True)
class Config:
    """Parsed and typed configuration; ``values[section][key]``."""

    values: dict
    source: str = "<defaults>"

    def get(self, section, key):
        value = self.values[section][key]
        if value is REQUIRED:
            raise ConfigError(f"{self.source}: missing required field [{section}] {key}")
        return value

    @property
    def seed(self) -> int:
        return self.get("simulation", "seed")

    def acquisition(self) -> AcquisitionParams:
        try:
            return AcquisitionParams(**{k: self.get("acquisition", k) for k in SCHEMA["acquisition"]})
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [acquisition] {exc}") from exc

    def geometry(self) -> ScanGeometry:
        p = self.acquisition()
        try:
            return ScanGeometry(
                self.get("geometry", "depth_min_m"),
                self.get("geometry", "depth_max_m"),
                math.radians(self.get("geometry", "sector_width_deg")),
                p.fast_time_samples,
                p.firings,
                center_angle_rad=math.radians(self.get("geometry", "center_angle_deg")),
            )
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [geometry] {exc}") from exc

    def speeds(self) -> list[float]:
        sweep = self.get("phantom", "v_max_sweep")
        if sweep is not None:
            if len(sweep) != 3 or sweep[2] < 1 or sweep[2] != int(sweep[2]):
                raise ConfigError(f"{self.source}: [phantom] v_max_sweep needs 'start, stop, count'")
            return [float(v) for v in np.linspace(sweep[0], sweep[1], int(sweep[2]))]
        return list(self.get("phantom", "v_max_mps"))

    def density_per_mm2(self) -> float:
        explicit = self.get("phantom", "density_per_mm2")
        if explicit is not None:
            return explicit
        # requested scatterers per resolution cell at the phantom's range
        if self.get("phantom", "kind") == "disk":
            r = self.get("phantom", "center_range_m")
        else:
            r = math.hypot(self.get("phantom", "center_x_m"), self.get("phantom", "center_z_m"))
        cell_mm2 = resolution_cell_area_m2(self.acquisition(), r) * 1e6
        return self.get("phantom", "scatterers_per_cell") / cell_mm2

    def scenes(self) -> list[tuple[str, Scene]]:
        """``(sequence_id, scene)`` for every repeat of every configured phantom."""
        kind = self.get("phantom", "kind")
        density = self.density_per_mm2()
        frac = self.get("phantom", "fluctuation_frac")
        repeats = self.get("simulation", "repeats")
        seed = self.seed
        out = []
        if kind == "disk":
            for i, v in enumerate(self.speeds()):
                for rep in range(repeats):
                    spec = {
                        "center_range_m": self.get("phantom", "center_range_m"),
                        "radius_m": self.get("phantom", "radius_m"),
                        "v_max_mps": v,
                        "center_angle_rad": math.radians(self.get("phantom", "center_angle_deg")),
                        "clockwise": self.get("phantom", "clockwise"),
                    }
                    out.append((f"disk{i:03d}r{rep:02d}", Scene("disk", spec, density, seed + 1000 * i + rep, frac)))
        elif kind == "vortex":
            for rep in range(repeats):
                spec = {
                    "center": [self.get("phantom", "center_x_m"), self.get("phantom", "center_z_m")],
                    "circulation": self.get("phantom", "circulation_m2_s"),
                    "core_radius": self.get("phantom", "core_radius_m"),
                    "support_radius_m": self.get("phantom", "support_radius_m"),
                }
                out.append((f"vortex{rep:03d}", Scene("vortex", spec, density, seed + rep, frac)))
        else:
            raise ConfigError(f"{self.source}: [phantom] kind must be 'disk' or 'vortex', got {kind!r}")
        return out

    def train_config(self) -> TrainConfig:
        t = {k: self.get("train", k) for k in SCHEMA["train"] if k != "kind"}
        try:
            return TrainConfig(seed=self.seed, **t)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [train] {exc}") from exc

    def effective(self) -> dict:
        """All values with defaults filled in (``None`` for missing required fields)."""
        return {
            s: {k: (None if v is REQUIRED else v) for k, v in keys.items()} for s, keys in self.values.items()
        }


def _convert(section, key, raw, where):
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key '{key}' in section [{section}]")
    conv = SCHEMA[section][key][0]
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: invalid value for [{section}] {key}: {raw!r} ({exc})") from exc


def load_config(path=None, overrides=(), env=None) -> Config:
    """Read ``path`` (optional), apply ``section.key=value`` overrides, then ``DOPPLER_SEED``."""
    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from exc
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        lines = _line_numbers(text)
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}:{lines.get((section, None), '?')}: unknown section [{section}]")
            for key, raw in parser.items(section):
                where = f"{path}:{lines.get((section, key), '?')}"
                values[section][key] = _convert(section, key, raw, where)
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if section not in SCHEMA:
            raise ConfigError(f"override {item!r}: unknown section [{section}]")
        values[section][key] = _convert(section, key.strip(), raw.strip(), f"--set {item}")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        values["simulation"]["seed"] = _convert("simulation", "seed", env[SEED_ENV], SEED_ENV)
    return Config(values, source)


def with_values(config: Config, section: str, **changes) -> Config:
    values = {s: dict(v) for s, v in config.values.items()}
    values[section].update(changes)
    return replace(config, values=values)
