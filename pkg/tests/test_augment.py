import math
from dataclasses import replace

import numpy as np
import pytest

from colordoppler.augment import (
    DatasetManifest,
    ManifestEntry,
    Scene,
    crop_geometry,
    dataset_power_threshold,
    flip_sample,
    is_train_set_1,
    make_aliased_variant,
    manifest_entry,
    normalize_sample,
    power_qc,
    random_disk_scene,
    random_vortex_scene,
    simulate_sample,
    split_folds,
    train_val_split,
    zoom_sample,
)
from colordoppler.core import AcquisitionParams, DataError, DopplerSample, IQEnsemble, NumericError, ScanGeometry, nyquist_velocity
from colordoppler.estimate import autocorrelator
from colordoppler.phantom import truth_radial_map

PARAMS = AcquisitionParams(packet_size=2, fast_time_samples=48, firings=12)
GEOM = ScanGeometry(0.05, 0.11, math.radians(30), 48, 12)


def disk_scene(v=0.45, clockwise=False, seed=3):
    spec = {"center_range_m": 0.08, "radius_m": 0.02, "v_max_mps": v, "clockwise": clockwise}
    return Scene("disk", spec, 1.0, seed)


@pytest.fixture(scope="module")
def disk_sample():
    return simulate_sample(disk_scene(), GEOM, PARAMS, snr_db=20, seed=1, sequence_id="d")


def test_scene_round_trip():
    s = disk_scene()
    assert Scene.from_dict(s.to_dict()) == s
    a, b = s.build(), Scene.from_dict(s.to_dict()).build()
    assert np.array_equal(a.positions, b.positions)
    with pytest.raises(ValueError):
        Scene("blob", {}, 1.0, 0).build()


def test_zoom_grid_size_full_grid():
    g = ScanGeometry(0.01, 0.12, math.radians(50), 180, 40)
    assert (math.ceil(1.5 * g.h), math.ceil(1.5 * g.w)) == (270, 60)
    crop = crop_geometry(replace(g, h=270, w=60), 10, 5, 180, 40)
    assert (crop.h, crop.w) == (180, 40)
    with pytest.raises(ValueError):
        crop_geometry(replace(g, h=270, w=60), 100, 0, 180, 40)


def test_zoom_truth_matches_fine_grid():
    scene = disk_scene()
    z = zoom_sample(scene, GEOM, PARAMS, 1.5, seed=0, offset=(0, 0))
    fine = replace(GEOM, h=72, w=18)
    truth, mask = truth_radial_map(scene.build(), fine)
    np.testing.assert_array_equal(z.truth, truth[:48, :12])
    np.testing.assert_array_equal(z.mask, mask[:48, :12])
    # the cropped geometry reproduces the same pixel centres
    recomputed, _ = truth_radial_map(scene.build(), z.iq.geometry)
    np.testing.assert_allclose(recomputed, z.truth, atol=1e-12)
    assert "zoomed" in z.tags and z.iq.shape == (2, 48, 12)


def test_zoom_seeded_offset():
    a = zoom_sample(disk_scene(), GEOM, PARAMS, 1.5, seed=4)
    b = zoom_sample(disk_scene(), GEOM, PARAMS, 1.5, seed=4)
    assert a.meta["zoom_offset"] == b.meta["zoom_offset"]
    assert a.iq.data.tobytes() == b.iq.data.tobytes()
    with pytest.raises(ValueError):
        zoom_sample(disk_scene(), GEOM, PARAMS, 1.0)


def test_double_flip_identity(disk_sample):
    twice = flip_sample(flip_sample(disk_sample))
    assert twice.iq.data.tobytes() == disk_sample.iq.data.tobytes()
    assert twice.truth.tobytes() == disk_sample.truth.tobytes()
    assert twice.tags == disk_sample.tags and twice.iq.geometry == disk_sample.iq.geometry


def test_flip_matches_counter_rotating_disk(disk_sample):
    flipped = flip_sample(disk_sample)
    assert "flipped" in flipped.tags
    assert flipped.mask.sum() == disk_sample.mask.sum()
    mirror = simulate_sample(disk_scene(clockwise=True), GEOM, PARAMS, seed=1)
    np.testing.assert_allclose(flipped.truth, mirror.truth, atol=1e-12)
    np.testing.assert_array_equal(flipped.mask, mirror.mask)


def test_aliased_variant_threshold():
    # halving the PRF halves v_N, so a 0.45 m/s disk exceeds it
    v_n = 0.5 * nyquist_velocity(AcquisitionParams())
    assert v_n == pytest.approx(0.4278, abs=1e-4) and v_n < 0.45
    scene = disk_scene(v=0.6)
    s = make_aliased_variant(scene, GEOM, PARAMS, factor_range=(0.5, 0.5), seed=0)
    assert s.iq.params.prf_hz == 3000
    assert s.nyquist_mps == pytest.approx(0.4278, abs=1e-4)
    assert np.abs(s.truth[s.mask]).max() > s.nyquist_mps
    assert "aliased" in s.tags
    orig = simulate_sample(scene, GEOM, PARAMS)
    np.testing.assert_array_equal(s.truth, orig.truth)
    slow = make_aliased_variant(disk_scene(v=0.2), GEOM, PARAMS, seed=0)
    assert "aliased" not in slow.tags


def test_aliased_factor_distribution():
    factors = []
    for seed in range(1000):
        fs, _ = np.random.SeedSequence(seed).spawn(2)
        factors.append(np.random.default_rng(fs).uniform(0.4, 0.6))
    factors = np.array(factors)
    assert factors.min() >= 0.4 and factors.max() <= 0.6
    assert abs(factors.mean() - 0.5) < 0.01
    s = make_aliased_variant(disk_scene(), GEOM, PARAMS, seed=17)
    assert 0.4 <= s.meta["prf_factor"] <= 0.6
    assert s.meta["prf_factor"] == pytest.approx(factors[17])


def test_normalize(disk_sample):
    scaled = replace(disk_sample, iq=disk_sample.iq.with_data(disk_sample.iq.data * 37.0))
    a = normalize_sample(scaled)
    assert np.max(np.abs(a.iq.data)) == 1.0
    assert normalize_sample(a).iq.data.tobytes() == a.iq.data.tobytes()
    np.testing.assert_allclose(autocorrelator(a.iq).values, autocorrelator(disk_sample.iq).values, atol=1e-12)
    zero = replace(disk_sample, iq=disk_sample.iq.with_data(np.zeros_like(disk_sample.iq.data)))
    with pytest.raises(NumericError):
        normalize_sample(zero)


def test_power_qc(disk_sample):
    assert power_qc(disk_sample)
    assert power_qc(disk_sample, 0.0)
    zero = replace(disk_sample, iq=disk_sample.iq.with_data(np.zeros_like(disk_sample.iq.data)))
    assert not power_qc(zero)
    assert not power_qc(zero, 1e-12)
    thr = dataset_power_threshold([disk_sample])
    assert power_qc(disk_sample, thr)
    empty = replace(disk_sample, mask=np.zeros_like(disk_sample.mask))
    with pytest.raises(ValueError):
        power_qc(empty)


def test_random_scenes_respect_speed_and_sector():
    rng = np.random.default_rng(0)
    for i in range(10):
        for make in (random_disk_scene, random_vortex_scene):
            scene = make(rng, GEOM, (0.3, 0.6), 1.0, i)
            state = scene.build()
            assert 0.3 - 1e-9 <= state.flow.max_speed <= 0.6 + 1e-9
            truth, mask = truth_radial_map(state, GEOM)
            assert mask.any()


def manifest_of(n_seq, per_seq=3):
    entries = [
        ManifestEntry(f"s{i}_{k}", f"seq{i:02d}", ("original",) if k == 0 else ("aliased",))
        for i in range(n_seq)
        for k in range(per_seq)
    ]
    return DatasetManifest(entries)


def test_split_folds_37_sequences():
    m = split_folds(manifest_of(37), 9, seed=0)
    sizes = np.bincount([int(e.sequence_id[3:]) for e in m.entries if e.path.endswith("_0")], minlength=37)
    assert sizes.max() == 1
    per_fold = np.bincount([e.fold for e in m.entries if e.path.endswith("_0")], minlength=9)
    assert per_fold.max() - per_fold.min() <= 1
    fold_of = {}
    for e in m.entries:
        assert 0 <= e.fold < 9
        assert fold_of.setdefault(e.sequence_id, e.fold) == e.fold
    assert split_folds(manifest_of(37), 9, seed=0).entries == m.entries
    with pytest.raises(ValueError):
        split_folds(manifest_of(5), 9)


def test_train_val_split_partitions():
    m = split_folds(manifest_of(37), 9, seed=1)
    seen_test = []
    for f in range(9):
        train, val, test = train_val_split(m, f, 0.1, seed=0)
        ids = [set(x.sequence_ids) for x in (train, val, test)]
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
        assert len(train.entries) + len(val.entries) + len(test.entries) == len(m.entries)
        assert len(ids[1]) == round(0.1 * (37 - len(ids[2])))
        seen_test += [e.path for e in test.entries]
    assert sorted(seen_test) == sorted(e.path for e in m.entries)
    with pytest.raises(ValueError):
        train_val_split(manifest_of(10), 0)


def test_manifest_round_trip_and_counts(tmp_path):
    m = split_folds(manifest_of(9), 9)
    m.save(tmp_path / "m.json")
    back = DatasetManifest.load(tmp_path / "m.json")
    assert back.entries == m.entries and back.folds == 9
    assert m.counts == {"aliased": 18, "original": 9, "total": 27}
    (tmp_path / "bad.json").write_text("[")
    with pytest.raises(DataError):
        DatasetManifest.load(tmp_path / "bad.json")


def test_train_set_filters():
    entries = [
        ManifestEntry("a", "s", ("original",)),
        ManifestEntry("b", "s", ("zoomed",)),
        ManifestEntry("c", "s", ("aliased", "zoomed")),
        ManifestEntry("d", "s", ("aliased",)),
    ]
    m = DatasetManifest(entries)
    assert [e.path for e in m.filter(is_train_set_1).entries] == ["a", "b"]
    assert len(m.entries) == 4


def test_manifest_aliased_count_matches_truth(disk_sample):
    fast = simulate_sample(disk_scene(v=1.3), GEOM, PARAMS, sequence_id="f")
    samples = [disk_sample, fast, flip_sample(fast)]
    m = DatasetManifest([manifest_entry(s, f"p{i}") for i, s in enumerate(samples)])
    recount = sum(bool(np.any(np.abs(s.truth[s.mask]) > s.nyquist_mps)) for s in samples)
    assert m.counts.get("aliased", 0) == recount == 2
