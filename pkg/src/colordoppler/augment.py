"""Training-set construction: scene re-simulation, zoom, flip, aliased variants,
normalization, sequence-level folds and Doppler-power quality control."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquire import synthesize_ensemble
from .core import (
    AcquisitionParams,
    DataError,
    DopplerSample,
    IQEnsemble,
    NumericError,
    ScanGeometry,
    atomic_write_bytes,
    canonical_json,
    has_aliasing,
)
from .estimate import lag_one_autocorrelation
from .phantom import Disk, PhantomState, make_disk_phantom, make_vortex_phantom, truth_radial_map


@dataclass(frozen=True)
class Scene:
    """Everything needed to rebuild a phantom bit-for-bit.

    ``kind`` is ``"disk"`` (keys ``center_range_m, radius_m, v_max_mps`` and
    optional ``center_angle_rad, clockwise``) or ``"vortex"`` (keys
    ``center, circulation, core_radius, support_radius_m``).
    """

    kind: str
    spec: dict
    density_per_mm2: float
    seed: int
    fluctuation_frac: float = 0.1

    def build(self) -> PhantomState:
        s = self.spec
        if self.kind == "disk":
            return make_disk_phantom(
                s["center_range_m"],
                s["radius_m"],
                s["v_max_mps"],
                self.density_per_mm2,
                self.seed,
                center_angle_rad=s.get("center_angle_rad", 0.0),
                clockwise=s.get("clockwise", False),
                fluctuation_frac=self.fluctuation_frac,
            )
        if self.kind == "vortex":
            center = tuple(s["center"])
            return make_vortex_phantom(
                center,
                s["circulation"],
                s["core_radius"],
                Disk(center, s["support_radius_m"]),
                self.density_per_mm2,
                self.seed,
                fluctuation_frac=self.fluctuation_frac,
            )
        raise ValueError(f"unknown scene kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Scene:
        return cls(**d)


def _sample_from_ensemble(iq, state, sequence_id, tags, meta) -> DopplerSample:
    truth, mask = truth_radial_map(state, iq.geometry)
    tags = set(tags)
    if has_aliasing(truth, mask, iq.nyquist_mps):
        tags.add("aliased")
    return DopplerSample(iq, truth, mask, sequence_id, frozenset(tags), meta)


def simulate_sample(
    scene: Scene,
    geometry: ScanGeometry,
    params: AcquisitionParams,
    *,
    snr_db: float | None = None,
    seed: int = 0,
    sequence_id: str = "seq",
    tags=("original",),
    meta: dict | None = None,
) -> DopplerSample:
    """Simulate one scene; the ``aliased`` tag is added when the truth exceeds ``v_N``."""
    state = scene.build()
    iq = synthesize_ensemble(state, geometry, params, noise_snr_db=snr_db, seed=seed)
    meta = {"scene": scene.to_dict(), "snr_db": snr_db, "sim_seed": seed, **(meta or {})}
    return _sample_from_ensemble(iq, state, sequence_id, tags, meta)


def crop_geometry(geometry: ScanGeometry, i0: int, j0: int, h: int, w: int) -> ScanGeometry:
    """Geometry of the ``h x w`` window starting at pixel ``(i0, j0)``."""
    if i0 < 0 or j0 < 0 or i0 + h > geometry.h or j0 + w > geometry.w:
        raise ValueError(f"crop window {h}x{w} at ({i0}, {j0}) exceeds the {geometry.h}x{geometry.w} grid")
    r = geometry.ranges()
    theta = geometry.angles()
    sector = (w - 1) * geometry.angle_step_rad
    return replace(
        geometry,
        depth_min_m=float(r[i0]),
        depth_max_m=float(r[i0 + h - 1]),
        sector_width_rad=sector,
        center_angle_rad=float(theta[j0] + sector / 2),
        h=h,
        w=w,
    )


def zoom_sample(
    scene: Scene,
    geometry: ScanGeometry,
    params: AcquisitionParams,
    ratio: float = 1.5,
    seed: int = 0,
    *,
    snr_db: float | None = None,
    sequence_id: str = "seq",
    offset: tuple[int, int] | None = None,
) -> DopplerSample:
    """Re-simulate ``scene`` on a ``ratio``-times finer grid and crop back to ``h x w``.

    The finer grid covers the same depth range and sector with more samples
    and more firings, so the crop shows a magnified part of the scene.
    """
    if ratio <= 1:
        raise ValueError("zoom ratio must be > 1")
    h, w = geometry.h, geometry.w
    fh, fw = math.ceil(ratio * h), math.ceil(ratio * w)
    offset_seed, sim_seed = np.random.SeedSequence(seed).spawn(2)
    if offset is None:
        rng = np.random.default_rng(offset_seed)
        offset = (int(rng.integers(0, fh - h + 1)), int(rng.integers(0, fw - w + 1)))
    i0, j0 = offset
    fine_geometry = replace(geometry, h=fh, w=fw)
    fine_params = replace(params, fast_time_samples=fh, firings=fw)
    cropped = crop_geometry(fine_geometry, i0, j0, h, w)
    state = scene.build()
    fine = synthesize_ensemble(
        state, fine_geometry, fine_params, noise_snr_db=snr_db, seed=int(sim_seed.generate_state(1)[0])
    )
    truth, mask = truth_radial_map(state, fine_geometry)
    window = (slice(i0, i0 + h), slice(j0, j0 + w))
    iq = IQEnsemble(fine.data[(slice(None),) + window], params, cropped)
    truth, mask = truth[window], mask[window]
    tags = {"zoomed"}
    if has_aliasing(truth, mask, iq.nyquist_mps):
        tags.add("aliased")
    meta = {"scene": scene.to_dict(), "snr_db": snr_db, "sim_seed": seed, "zoom_ratio": ratio, "zoom_offset": [i0, j0]}
    return DopplerSample(iq, truth, mask, sequence_id, frozenset(tags), meta)


def flip_sample(sample: DopplerSample) -> DopplerSample:
    """Mirror a sample along the firing axis; radial velocities keep their sign."""
    iq = sample.iq
    geometry = replace(iq.geometry, center_angle_rad=-iq.geometry.center_angle_rad)
    flipped = IQEnsemble(iq.data[:, :, ::-1], iq.params, geometry)
    return replace(
        sample,
        iq=flipped,
        truth=sample.truth[:, ::-1],
        mask=sample.mask[:, ::-1],
        tags=sample.tags ^ {"flipped"},
    )


def make_aliased_variant(
    scene: Scene,
    geometry: ScanGeometry,
    params: AcquisitionParams,
    factor_range: tuple[float, float] = (0.4, 0.6),
    seed: int = 0,
    *,
    snr_db: float | None = None,
    sequence_id: str = "seq",
) -> DopplerSample:
    """Re-simulate ``scene`` with the PRF scaled by a random factor in ``factor_range``.

    The truth stays the alias-free radial map. The result carries the
    ``aliased`` tag only if the reduced Nyquist limit is actually exceeded;
    otherwise it has no tags and is normally discarded by the caller.
    """
    factor_seed, sim_seed = np.random.SeedSequence(seed).spawn(2)
    factor = float(np.random.default_rng(factor_seed).uniform(*factor_range))
    reduced = replace(params, prf_hz=params.prf_hz * factor)
    return simulate_sample(
        scene,
        geometry,
        reduced,
        snr_db=snr_db,
        seed=int(sim_seed.generate_state(1)[0]),
        sequence_id=sequence_id,
        tags=(),
        meta={"prf_factor": factor},
    )


def normalize_sample(sample: DopplerSample) -> DopplerSample:
    """Divide the IQ data by its largest modulus over all frames and pixels."""
    peak = float(np.max(np.abs(sample.iq.data)))
    if peak == 0:
        raise NumericError("cannot normalize an all-zero ensemble")
    if peak == 1.0:
        return sample
    iq = sample.iq
    return replace(sample, iq=IQEnsemble(iq.data / peak, iq.params, iq.geometry))


# --- random scenes ----------------------------------------------------------------

# Lamb-Oseen peak speed is G * PEAK_FACTOR / a
_LAMB_OSEEN_PEAK = -math.expm1(-(1.1209**2)) / (2 * math.pi * 1.1209)


def _fit_radius(geometry: ScanGeometry, center_range, center_angle, margin):
    """Largest radius of a disk at polar ``(center_range, center_angle)`` inside the sector."""
    half = geometry.sector_width_rad / 2
    off = abs(center_angle - geometry.center_angle_rad)
    return min(
        center_range - geometry.depth_min_m,
        geometry.depth_max_m - center_range,
        center_range * math.sin(max(half - off, 0.0)),
    ) - margin


def random_disk_scene(rng, geometry, speed_range, density_per_mm2, seed, *, radius_range=(0.4, 0.9),
                      fluctuation_frac=0.1) -> Scene:
    """Rotating disk placed at random inside the sector.

    The radius is drawn as a fraction (``radius_range``) of the largest radius
    that keeps a 1-pixel margin to the sector border.
    """
    span = geometry.depth_max_m - geometry.depth_min_m
    margin = geometry.range_step_m
    for _ in range(100):
        rc = geometry.depth_min_m + span * rng.uniform(0.3, 0.7)
        angle = geometry.center_angle_rad + geometry.sector_width_rad * rng.uniform(-0.15, 0.15)
        limit = _fit_radius(geometry, rc, angle, margin)
        if limit > 4 * margin:
            break
    else:
        raise ValueError("sector too small for a disk phantom")
    spec = {
        "center_range_m": float(rc),
        "radius_m": float(limit * rng.uniform(*radius_range)),
        "v_max_mps": float(rng.uniform(*speed_range)),
        "center_angle_rad": float(angle),
        "clockwise": bool(rng.integers(2)),
    }
    return Scene("disk", spec, density_per_mm2, int(seed), fluctuation_frac)


def random_vortex_scene(rng, geometry, speed_range, density_per_mm2, seed, *, fluctuation_frac=0.1) -> Scene:
    """Lamb-Oseen vortex whose peak speed is drawn from ``speed_range``."""
    base = random_disk_scene(rng, geometry, speed_range, density_per_mm2, seed, radius_range=(0.6, 0.95))
    d = base.spec
    support = d["radius_m"]
    core = support * rng.uniform(0.25, 0.45)
    sign = -1.0 if d["clockwise"] else 1.0
    center = [d["center_range_m"] * math.sin(d["center_angle_rad"]), d["center_range_m"] * math.cos(d["center_angle_rad"])]
    spec = {
        "center": [float(c) for c in center],
        "circulation": float(sign * d["v_max_mps"] * core / _LAMB_OSEEN_PEAK),
        "core_radius": float(core),
        "support_radius_m": float(support),
    }
    return Scene("vortex", spec, density_per_mm2, int(seed), fluctuation_frac)


# --- manifests and folds ----------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    sequence_id: str
    tags: tuple[str, ...]
    fold: int | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    folds: int | None = None

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(tag for e in self.entries for tag in e.tags)
        c["total"] = len(self.entries)
        return dict(sorted(c.items()))

    @property
    def sequence_ids(self) -> list[str]:
        return sorted({e.sequence_id for e in self.entries})

    def filter(self, predicate) -> DatasetManifest:
        return DatasetManifest([e for e in self.entries if predicate(e)], self.folds)

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "counts": self.counts,
            "entries": [
                {"path": e.path, "sequence_id": e.sequence_id, "tags": list(e.tags), "fold": e.fold}
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        atomic_write_bytes(Path(path), canonical_json(self.to_dict()))

    @classmethod
    def load(cls, path) -> DatasetManifest:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
            entries = [
                ManifestEntry(e["path"], e["sequence_id"], tuple(e["tags"]), e.get("fold")) for e in d["entries"]
            ]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: invalid manifest ({exc})") from exc
        return cls(entries, d.get("folds"))

    def resolve(self, root) -> list[Path]:
        return [Path(root) / e.path for e in self.entries]


def manifest_entry(sample: DopplerSample, path: str) -> ManifestEntry:
    return ManifestEntry(path, sample.sequence_id, tuple(sorted(sample.tags)))


def is_train_set_1(entry: ManifestEntry) -> bool:
    """Original samples plus alias-free zoomed samples."""
    return "original" in entry.tags or ("zoomed" in entry.tags and "aliased" not in entry.tags)


def split_folds(manifest: DatasetManifest, folds: int = 9, seed: int = 0) -> DatasetManifest:
    """Assign whole sequences to ``folds`` folds of near-equal sequence counts."""
    ids = manifest.sequence_ids
    if len(ids) < folds:
        raise ValueError(f"{len(ids)} sequences cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    fold_of = {ids[i]: rank % folds for rank, i in enumerate(order)}
    entries = [replace(e, fold=fold_of[e.sequence_id]) for e in manifest.entries]
    return DatasetManifest(entries, folds)


def train_val_split(
    manifest: DatasetManifest, test_fold: int, val_fraction: float = 0.1, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Split into ``(train, val, test)``; validation takes whole sequences."""
    if manifest.folds is None:
        raise ValueError("manifest has no fold assignment")
    test = manifest.filter(lambda e: e.fold == test_fold)
    rest = manifest.filter(lambda e: e.fold != test_fold)
    ids = rest.sequence_ids
    n_val = max(1, int(round(val_fraction * len(ids)))) if len(ids) > 1 else 0
    rng = np.random.default_rng([seed, test_fold])
    val_ids = {ids[i] for i in rng.permutation(len(ids))[:n_val]}
    return (
        rest.filter(lambda e: e.sequence_id not in val_ids),
        rest.filter(lambda e: e.sequence_id in val_ids),
        test,
    )


# --- quality control --------------------------------------------------------------


def masked_power(sample: DopplerSample) -> np.ndarray:
    return lag_one_autocorrelation(sample.iq).r0[sample.mask]


def dataset_power_threshold(samples, drop_db: float = 20.0) -> float:
    """``drop_db`` below the median masked Doppler power of all ``samples``."""
    powers = np.concatenate([masked_power(s) for s in samples])
    return float(np.median(powers)) * 10 ** (-drop_db / 10)


def power_qc(sample: DopplerSample, power_threshold: float | None = None, max_low_fraction: float = 0.7) -> bool:
    """Keep unless more than ``max_low_fraction`` of the masked pixels have power below threshold.

    Without an explicit threshold the sample's own median masked power,
    lowered by 20 dB, is used.
    """
    if not sample.mask.any():
        raise ValueError("power QC needs a nonempty mask")
    power = masked_power(sample)
    if power_threshold is None:
        median = float(np.median(power))
        if median == 0:
            return False
        power_threshold = median * 1e-2
    low = np.mean(power < power_threshold)
    return bool(low <= max_low_fraction)
