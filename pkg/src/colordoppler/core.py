"""Domain types, unit conversions, scan geometry and the on-disk sample bundle."""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

BUNDLE_FORMAT_VERSION = 1
SAMPLE_TAGS = frozenset({"original", "zoomed", "aliased", "flipped"})


class DopplerError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DopplerError):
    """Invalid or incomplete configuration."""


class DataError(DopplerError):
    """Malformed or inconsistent data on disk or in memory."""


class CorruptHeaderError(DataError):
    """A bundle's meta.json is unreadable or lacks required fields."""


class ShapeMismatchError(DataError):
    """Array payload size disagrees with the declared shape."""


class NonFiniteError(DataError):
    """NaN or Inf found where finite values are required."""


class NumericError(DopplerError):
    """A numerical procedure cannot produce a meaningful result."""


@dataclass(frozen=True)
class AcquisitionParams:
    """Probe and sequence parameters of one color Doppler acquisition.

    Defaults follow the simulated P4-2v probe setup.
    """

    center_frequency_hz: float = 2.7e6
    prf_hz: float = 6000.0
    sound_speed_mps: float = 1540.0
    packet_size: int = 8
    firings: int = 40
    fast_time_samples: int = 180
    cycles_doppler: int = 6
    bandwidth_frac: float = 0.74
    element_count: int = 64
    pitch_m: float = 300e-6

    def __post_init__(self):
        for name in ("center_frequency_hz", "prf_hz", "sound_speed_mps", "pitch_m"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        if self.packet_size < 2:
            raise ValueError(f"packet_size must be >= 2, got {self.packet_size}")
        if self.firings < 4 or self.fast_time_samples < 4:
            raise ValueError("firings and fast_time_samples must be >= 4")
        if self.cycles_doppler <= 0 or self.element_count <= 0:
            raise ValueError("cycles_doppler and element_count must be > 0")
        if not 0 < self.bandwidth_frac < 2:
            raise ValueError(f"bandwidth_frac must lie in (0, 2), got {self.bandwidth_frac}")

    @property
    def wavelength_m(self) -> float:
        return self.sound_speed_mps / self.center_frequency_hz

    @property
    def aperture_m(self) -> float:
        return self.element_count * self.pitch_m


@dataclass(frozen=True)
class ScanGeometry:
    """Polar sector grid.

    Pixel ``(i, j)`` sits at range ``depth_min + i * (depth_max - depth_min) / (h - 1)``
    on the beam steered at ``center_angle - sector/2 + j * sector / (w - 1)`` radians,
    measured from the apex. Physical coordinates are ``x`` (lateral) and ``z``
    (depth), with ``x = r sin(theta)`` and ``z = r cos(theta)`` relative to the apex.
    """

    depth_min_m: float
    depth_max_m: float
    sector_width_rad: float
    h: int
    w: int
    apex_position: tuple[float, float] = (0.0, 0.0)
    center_angle_rad: float = 0.0

    def __post_init__(self):
        if not (0 <= self.depth_min_m < self.depth_max_m):
            raise ValueError("require 0 <= depth_min < depth_max")
        if not (0 < self.sector_width_rad <= math.pi):
            raise ValueError("sector width must lie in (0, pi]")
        if self.h < 4 or self.w < 4:
            raise ValueError("h and w must be >= 4")
        object.__setattr__(self, "apex_position", tuple(float(v) for v in self.apex_position))

    @property
    def range_step_m(self) -> float:
        return (self.depth_max_m - self.depth_min_m) / (self.h - 1)

    @property
    def angle_step_rad(self) -> float:
        return self.sector_width_rad / (self.w - 1)

    def ranges(self) -> np.ndarray:
        return self.depth_min_m + np.arange(self.h) * self.range_step_m

    def angles(self) -> np.ndarray:
        start = self.center_angle_rad - self.sector_width_rad / 2
        return start + np.arange(self.w) * self.angle_step_rad

    def pixel_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, z)`` arrays of shape ``(h, w)`` for every pixel center."""
        r = self.ranges()[:, None]
        theta = self.angles()[None, :]
        x0, z0 = self.apex_position
        return x0 + r * np.sin(theta), z0 + r * np.cos(theta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["apex_position"] = list(self.apex_position)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScanGeometry:
        return cls(**{**d, "apex_position": tuple(d.get("apex_position", (0.0, 0.0)))})


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class IQEnsemble:
    """Slow-time stack of beamformed baseband signals, ``data[k][i][j]``."""

    data: np.ndarray
    params: AcquisitionParams
    geometry: ScanGeometry

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        if data.ndim != 3:
            raise ValueError(f"IQ data must be 3-D [n][h][w], got shape {data.shape}")
        n, h, w = data.shape
        p, g = self.params, self.geometry
        if (n, h, w) != (p.packet_size, p.fast_time_samples, p.firings):
            raise ValueError(f"IQ shape {data.shape} disagrees with acquisition parameters")
        if (h, w) != (g.h, g.w):
            raise ValueError(f"IQ shape {data.shape} disagrees with scan geometry")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("IQ data contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def nyquist_mps(self) -> float:
        return nyquist_velocity(self.params)

    def with_data(self, data: np.ndarray, **param_changes) -> IQEnsemble:
        """Copy with new data; ``packet_size`` follows the data automatically."""
        params = replace(self.params, packet_size=np.shape(data)[0], **param_changes)
        return IQEnsemble(data, params, self.geometry)


@dataclass(frozen=True)
class VelocityMap:
    """Velocity values in m/s with the Nyquist velocity they refer to.

    ``valid`` flags pixels where an estimate exists (True everywhere for
    analytic maps).
    """

    values: np.ndarray
    nyquist_mps: float
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("velocity map contains non-finite values")
        object.__setattr__(self, "values", _freeze(values))
        valid = np.ones(values.shape, bool) if self.valid is None else np.asarray(self.valid, bool)
        object.__setattr__(self, "valid", _freeze(valid))


def has_aliasing(truth: np.ndarray, mask: np.ndarray, nyquist_mps: float) -> bool:
    """True when some masked pixel of an alias-free map exceeds the Nyquist limit."""
    return bool(np.any(np.abs(truth[mask]) > nyquist_mps))


@dataclass(frozen=True)
class DopplerSample:
    """Training pair: IQ ensemble, alias-free truth (m/s) and region mask."""

    iq: IQEnsemble
    truth: np.ndarray
    mask: np.ndarray
    sequence_id: str
    tags: frozenset = frozenset({"original"})
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        hw = self.iq.shape[1:]
        truth = np.asarray(self.truth)
        if truth.dtype.kind != "f":
            truth = truth.astype(np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if truth.shape != hw or mask.shape != hw:
            raise ValueError(f"truth/mask shapes {truth.shape}/{mask.shape} differ from IQ {hw}")
        if not np.all(np.isfinite(truth)):
            raise NonFiniteError("truth map contains non-finite values")
        tags = frozenset(self.tags)
        if not tags <= SAMPLE_TAGS:
            raise ValueError(f"unknown tags: {sorted(tags - SAMPLE_TAGS)}")
        if ("aliased" in tags) != has_aliasing(truth, mask, self.iq.nyquist_mps):
            raise ValueError("'aliased' tag must be set exactly when masked |truth| exceeds v_N")
        object.__setattr__(self, "truth", _freeze(truth))
        object.__setattr__(self, "mask", _freeze(mask))
        object.__setattr__(self, "tags", tags)

    @property
    def nyquist_mps(self) -> float:
        return self.iq.nyquist_mps


def nyquist_velocity(params: AcquisitionParams) -> float:
    """Maximum unambiguous axial velocity ``c * PRF / (4 f_c)``."""
    return params.sound_speed_mps * params.prf_hz / (4 * params.center_frequency_hz)


def phase_to_velocity(phase, nyquist_mps: float):
    """Per-shot phase shift (rad) to axial velocity (m/s): ``v = -v_N * phi / pi``."""
    if nyquist_mps <= 0:
        raise ValueError("Nyquist velocity must be > 0")
    return -nyquist_mps * np.asarray(phase) / np.pi


def velocity_to_phase(velocity, nyquist_mps: float):
    """Inverse of :func:`phase_to_velocity`: ``phi = -pi * v / v_N``."""
    if nyquist_mps <= 0:
        raise ValueError("Nyquist velocity must be > 0")
    return -np.pi * np.asarray(velocity) / nyquist_mps


# --- bundle I/O -------------------------------------------------------------

_PARAM_FIELDS = tuple(AcquisitionParams.__dataclass_fields__)
_GEOMETRY_FIELDS = tuple(ScanGeometry.__dataclass_fields__)


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def canonical_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def sample_meta(sample: DopplerSample) -> dict:
    n, h, w = sample.iq.shape
    return {
        "format_version": BUNDLE_FORMAT_VERSION,
        "shape": [n, h, w],
        "params": asdict(sample.iq.params),
        "geometry": sample.iq.geometry.to_dict(),
        "sequence_id": sample.sequence_id,
        "tags": sorted(sample.tags),
        "extra": sample.meta,
    }


def write_bundle(sample: DopplerSample, path) -> Path:
    """Write ``sample`` as a bundle directory (float32 payloads, little-endian).

    The directory is assembled next to ``path`` and renamed into place, so an
    existing bundle is replaced as a whole.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iq = np.stack([sample.iq.data.real, sample.iq.data.imag], axis=-1)
    files = {
        "meta.json": canonical_json(sample_meta(sample)),
        "iq.bin": iq.astype("<f4").tobytes(),
        "truth.bin": sample.truth.astype("<f4").tobytes(),
        "mask.bin": sample.mask.astype("u1").tobytes(),
    }
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        for name, payload in files.items():
            (tmp / name).write_bytes(payload)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CorruptHeaderError(f"{path}: missing meta.json") from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable meta.json ({exc})") from exc
    required = ("format_version", "shape", "params", "geometry", "sequence_id", "tags")
    if not isinstance(meta, dict) or any(k not in meta for k in required):
        raise CorruptHeaderError(f"{path}: meta.json lacks one of {required}")
    if meta["format_version"] != BUNDLE_FORMAT_VERSION:
        raise CorruptHeaderError(f"{path}: unsupported format_version {meta['format_version']!r}")
    if set(meta["params"]) != set(_PARAM_FIELDS) or set(meta["geometry"]) != set(_GEOMETRY_FIELDS):
        raise CorruptHeaderError(f"{path}: params/geometry fields do not match the format")
    return meta


def _read_array(file: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        raw = file.read_bytes()
    except FileNotFoundError as exc:
        raise ShapeMismatchError(f"{file}: missing payload") from exc
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise ShapeMismatchError(f"{file}: {len(raw)} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def read_bundle(path) -> DopplerSample:
    """Read a bundle written by :func:`write_bundle`.

    All payloads are validated before any object is built; arrays come back
    in the stored single precision (complex64 / float32).
    """
    path = Path(path)
    meta = _read_meta(path)
    try:
        n, h, w = (int(v) for v in meta["shape"])
        params = AcquisitionParams(**meta["params"])
        geometry = ScanGeometry.from_dict(meta["geometry"])
    except (TypeError, ValueError) as exc:
        raise CorruptHeaderError(f"{path}: invalid header values ({exc})") from exc
    if (n, h, w) != (params.packet_size, params.fast_time_samples, params.firings):
        raise ShapeMismatchError(f"{path}: shape {meta['shape']} disagrees with params")
    iq = _read_array(path / "iq.bin", "<f4", (n, h, w, 2))
    truth = _read_array(path / "truth.bin", "<f4", (h, w))
    mask = _read_array(path / "mask.bin", "u1", (h, w))
    if not (np.all(np.isfinite(iq)) and np.all(np.isfinite(truth))):
        raise NonFiniteError(f"{path}: non-finite values in payload")
    if np.any(mask > 1):
        raise DataError(f"{path}: mask.bin must contain only 0/1")
    data = (iq[..., 0] + 1j * iq[..., 1]).astype(np.complex64)
    try:
        return DopplerSample(
            IQEnsemble(data, params, geometry),
            truth.astype(np.float32),
            mask.astype(bool),
            str(meta["sequence_id"]),
            frozenset(meta["tags"]),
            meta.get("extra", {}),
        )
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from exc


def quantize_sample(sample: DopplerSample) -> DopplerSample:
    """Round IQ and truth to the single precision used on disk."""
    iq = sample.iq
    return replace(
        sample,
        iq=IQEnsemble(iq.data.astype(np.complex64), iq.params, iq.geometry),
        truth=sample.truth.astype(np.float32),
    )
