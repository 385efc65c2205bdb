import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colordoppler.core import (
    AcquisitionParams,
    CorruptHeaderError,
    DataError,
    DopplerSample,
    IQEnsemble,
    NonFiniteError,
    ScanGeometry,
    ShapeMismatchError,
    VelocityMap,
    nyquist_velocity,
    phase_to_velocity,
    quantize_sample,
    read_bundle,
    velocity_to_phase,
    write_bundle,
)


def small_sample(seed=0, n=3, h=6, w=5, speed=0.2, prf=6000.0):
    rng = np.random.default_rng(seed)
    params = AcquisitionParams(packet_size=n, fast_time_samples=h, firings=w, prf_hz=prf)
    geometry = ScanGeometry(0.01, 0.05, math.radians(40), h, w)
    data = rng.standard_normal((n, h, w)) + 1j * rng.standard_normal((n, h, w))
    truth = speed * rng.uniform(-1, 1, (h, w))
    mask = rng.random((h, w)) > 0.3
    tags = {"original"}
    if np.any(np.abs(truth[mask]) > nyquist_velocity(params)):
        tags.add("aliased")
    return DopplerSample(IQEnsemble(data, params, geometry), truth, mask, "seq-a", frozenset(tags), {"note": 1})


# --- Nyquist and phase conversions ----------------------------------------------------


def test_nyquist_default_probe():
    assert nyquist_velocity(AcquisitionParams()) == pytest.approx(0.8556, abs=1e-4)


def test_nyquist_doubles_with_prf():
    a = AcquisitionParams(prf_hz=3000)
    b = AcquisitionParams(prf_hz=6000)
    assert nyquist_velocity(b) == pytest.approx(2 * nyquist_velocity(a), rel=1e-15)


def test_nyquist_lower_prf():
    # 1540 * 4500 / (4 * 2.7e6)
    assert nyquist_velocity(AcquisitionParams(prf_hz=4500)) == pytest.approx(0.641667, abs=1e-4)


def test_phase_to_velocity_examples():
    assert phase_to_velocity(0.0, 0.85) == 0.0
    assert phase_to_velocity(np.pi, 0.85) == pytest.approx(-0.85)
    assert phase_to_velocity(-0.4 * np.pi, 0.8556) == pytest.approx(0.34224, abs=1e-5)


def test_velocity_to_phase_examples():
    assert velocity_to_phase(0.0, 0.5) == 0.0
    assert velocity_to_phase(-0.5, 0.5) == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        velocity_to_phase(1.0, 0.0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50), st.floats(0.05, 3.0))
def test_phase_velocity_round_trip(values, v_n):
    v = np.array(values)
    back = phase_to_velocity(velocity_to_phase(v, v_n), v_n)
    np.testing.assert_allclose(back, v, rtol=4e-16, atol=4e-16 * v_n)


# --- types ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [dict(prf_hz=0), dict(packet_size=1), dict(firings=3), dict(bandwidth_frac=2.0), dict(sound_speed_mps=-1)],
)
def test_acquisition_params_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        AcquisitionParams(**kwargs)


def test_geometry_validation():
    with pytest.raises(ValueError):
        ScanGeometry(0.05, 0.01, 1.0, 10, 10)
    with pytest.raises(ValueError):
        ScanGeometry(0.01, 0.05, 4.0, 10, 10)


def test_geometry_grid_formulas():
    g = ScanGeometry(0.01, 0.12, math.radians(50), 180, 40)
    assert g.ranges()[0] == 0.01 and g.ranges()[-1] == pytest.approx(0.12)
    assert g.angles()[0] == pytest.approx(-math.radians(25))
    assert g.angles()[-1] == pytest.approx(math.radians(25))
    x, z = g.pixel_positions()
    np.testing.assert_allclose(np.hypot(x, z), np.broadcast_to(g.ranges()[:, None], x.shape))


def test_geometry_mapping_monotone():
    g = ScanGeometry(0.01, 0.12, math.radians(50), 30, 12)
    x, z = g.pixel_positions()
    r = np.hypot(x, z)
    theta = np.arctan2(x, z)
    assert np.all(np.diff(r, axis=0) > 0)
    assert np.all(np.diff(theta, axis=1) > 0)


def test_iq_ensemble_checks_shape_and_finiteness():
    params = AcquisitionParams(packet_size=2, fast_time_samples=4, firings=4)
    geom = ScanGeometry(0.01, 0.02, 0.5, 4, 4)
    with pytest.raises(ValueError):
        IQEnsemble(np.zeros((3, 4, 4), complex), params, geom)
    bad = np.zeros((2, 4, 4), complex)
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        IQEnsemble(bad, params, geom)


def test_sample_aliased_tag_must_match_truth():
    s = small_sample(speed=0.2)
    with pytest.raises(ValueError):
        DopplerSample(s.iq, s.truth, s.mask, "x", frozenset({"original", "aliased"}))
    fast = np.full(s.truth.shape, 2.0)
    with pytest.raises(ValueError):
        DopplerSample(s.iq, fast, s.mask, "x", frozenset({"original"}))
    DopplerSample(s.iq, fast, s.mask, "x", frozenset({"original", "aliased"}))


def test_velocity_map_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        VelocityMap(np.array([[np.inf]]), 0.8)


# --- bundles --------------------------------------------------------------------------


def test_bundle_round_trip_bit_exact(tmp_path):
    s = quantize_sample(small_sample())
    write_bundle(s, tmp_path / "b")
    r = read_bundle(tmp_path / "b")
    assert r.iq.data.tobytes() == s.iq.data.astype(np.complex64).tobytes()
    assert r.truth.tobytes() == s.truth.astype(np.float32).tobytes()
    assert np.array_equal(r.mask, s.mask)
    assert (r.sequence_id, r.tags, r.meta) == (s.sequence_id, s.tags, s.meta)
    assert r.iq.params == s.iq.params and r.iq.geometry == s.iq.geometry


def test_bundle_reserialization_byte_identical(tmp_path):
    s = small_sample(speed=1.5)
    write_bundle(s, tmp_path / "a")
    write_bundle(read_bundle(tmp_path / "a"), tmp_path / "b")
    for name in ("meta.json", "iq.bin", "truth.bin", "mask.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bundle_layout(tmp_path):
    s = quantize_sample(small_sample(n=2, h=4, w=4))
    write_bundle(s, tmp_path / "b")
    raw = np.frombuffer((tmp_path / "b" / "iq.bin").read_bytes(), "<f4").reshape(2, 4, 4, 2)
    np.testing.assert_array_equal(raw[..., 0], s.iq.data.real)
    np.testing.assert_array_equal(raw[..., 1], s.iq.data.imag)
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    assert meta["shape"] == [2, 4, 4] and meta["format_version"] == 1


def test_truncated_iq_is_shape_mismatch(tmp_path):
    write_bundle(small_sample(), tmp_path / "b")
    f = tmp_path / "b" / "iq.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(ShapeMismatchError):
        read_bundle(tmp_path / "b")


def test_header_packet_disagreeing_with_payload(tmp_path):
    # header claims n=2 while iq.bin holds n=8 frames
    write_bundle(small_sample(n=8), tmp_path / "b")
    meta_file = tmp_path / "b" / "meta.json"
    meta = json.loads(meta_file.read_text())
    meta["shape"][0] = 2
    meta["params"]["packet_size"] = 2
    meta_file.write_text(json.dumps(meta))
    with pytest.raises(ShapeMismatchError):
        read_bundle(tmp_path / "b")


def test_corrupt_header(tmp_path):
    write_bundle(small_sample(), tmp_path / "b")
    (tmp_path / "b" / "meta.json").write_text("{not json")
    with pytest.raises(CorruptHeaderError):
        read_bundle(tmp_path / "b")
    (tmp_path / "b" / "meta.json").write_text(json.dumps({"format_version": 1}))
    with pytest.raises(CorruptHeaderError):
        read_bundle(tmp_path / "b")


def test_nonfinite_payload(tmp_path):
    write_bundle(small_sample(), tmp_path / "b")
    f = tmp_path / "b" / "truth.bin"
    vals = np.frombuffer(f.read_bytes(), "<f4").copy()
    vals[3] = np.nan
    f.write_bytes(vals.tobytes())
    with pytest.raises(NonFiniteError):
        read_bundle(tmp_path / "b")


def test_error_kinds_are_data_errors():
    assert issubclass(CorruptHeaderError, DataError)
    assert issubclass(ShapeMismatchError, DataError)
    assert issubclass(NonFiniteError, DataError)
    assert len({CorruptHeaderError, ShapeMismatchError, NonFiniteError}) == 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_bundle_round_trip_property(tmp_path_factory, seed, n):
    path = tmp_path_factory.mktemp("p") / "b"
    s = quantize_sample(small_sample(seed, n=n))
    write_bundle(s, path)
    r = read_bundle(path)
    assert np.array_equal(r.iq.data, s.iq.data) and np.array_equal(r.truth, s.truth)
