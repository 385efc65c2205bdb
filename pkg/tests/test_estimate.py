import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colordoppler.core import AcquisitionParams, IQEnsemble, ScanGeometry, nyquist_velocity
from colordoppler.estimate import (
    AutocorrMap,
    autocorrelator,
    doppler_velocity_map,
    hamming_kernel,
    lag_one_autocorrelation,
    reduce_packet,
    smooth_autocorrelation,
)


def tone(alpha, n, h=12, w=6, amp=None):
    params = AcquisitionParams(packet_size=n, fast_time_samples=h, firings=w)
    geom = ScanGeometry(0.02, 0.05, 0.5, h, w)
    a = np.ones((h, w)) if amp is None else amp
    data = a[None] * np.exp(1j * alpha * np.arange(n))[:, None, None]
    return IQEnsemble(data, params, geom)


def test_single_product():
    ac = lag_one_autocorrelation(np.array([[[1.0 + 0j]], [[1j]]]))
    assert ac.r1[0, 0] == 1j
    assert np.angle(ac.r1[0, 0]) == pytest.approx(np.pi / 2)


def test_constant_signal_zero_velocity():
    ac = lag_one_autocorrelation(np.full((4, 2, 2), 2 - 1j))
    assert np.all(ac.r1.imag == 0) and np.all(ac.r1.real > 0)
    assert np.all(doppler_velocity_map(ac, 0.8).values == 0)


@pytest.mark.parametrize("n", [2, 8, 32])
def test_tone_phase(n):
    alpha = 0.7
    ac = lag_one_autocorrelation(tone(alpha, n))
    np.testing.assert_allclose(np.angle(ac.r1), alpha, atol=1e-12)
    np.testing.assert_allclose(ac.r0, 1.0)


def test_too_few_frames():
    with pytest.raises(ValueError):
        lag_one_autocorrelation(np.ones((1, 3, 3), complex))


def test_smoothing_preserves_constant():
    r1 = np.full((20, 8), 0.3 - 0.2j)
    out = smooth_autocorrelation(AutocorrMap(r1, np.full((20, 8), 2.0)))
    np.testing.assert_allclose(out.r1, r1, rtol=1e-14)
    np.testing.assert_allclose(out.r0, 2.0, rtol=1e-14)


def test_smoothing_impulse_imprint():
    h, w, kh, kw = 30, 12, 10, 4
    i0, j0 = 15, 6
    r1 = np.zeros((h, w), complex)
    r1[i0, j0] = 1.0
    out = smooth_autocorrelation(AutocorrMap(r1, np.zeros((h, w))), kh, kw).r1
    win_h = [0.54 - 0.46 * math.cos(2 * math.pi * k / (kh - 1)) for k in range(kh)]
    win_w = [0.54 - 0.46 * math.cos(2 * math.pi * k / (kw - 1)) for k in range(kw)]
    expected = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            mass, val = 0.0, 0.0
            for a in range(kh):
                for b in range(kw):
                    si, sj = i - a + (kh - 1) // 2, j - b + (kw - 1) // 2
                    if 0 <= si < h and 0 <= sj < w:
                        mass += win_h[a] * win_w[b]
                        if (si, sj) == (i0, j0):
                            val += win_h[a] * win_w[b]
            expected[i, j] = val / mass
    np.testing.assert_allclose(out.real, expected, atol=1e-15)
    assert np.all(out.imag == 0)


def test_hamming_kernel_shape():
    k = hamming_kernel(10, 4)
    assert k.shape == (10, 4)
    np.testing.assert_allclose(k, np.outer(np.hamming(10), np.hamming(4)))


def test_smoothing_kernel_scale_invariance():
    rng = np.random.default_rng(0)
    r1 = rng.standard_normal((16, 8)) + 1j * rng.standard_normal((16, 8))
    ac = AutocorrMap(r1, np.abs(r1))
    a = smooth_autocorrelation(ac, weights=hamming_kernel())
    b = smooth_autocorrelation(ac, weights=7.5 * hamming_kernel())
    np.testing.assert_allclose(np.angle(a.r1), np.angle(b.r1), atol=1e-13)


def test_smoothing_kernel_must_fit():
    with pytest.raises(ValueError):
        smooth_autocorrelation(AutocorrMap(np.ones((5, 3), complex), np.ones((5, 3))), 10, 4)


def test_velocity_examples():
    n = 8
    v_n = nyquist_velocity(AcquisitionParams())
    for v, expected in [(0.4 * v_n, 0.4 * v_n), (1.2 * v_n, -0.8 * v_n), (-1.2 * v_n, 0.8 * v_n)]:
        est = autocorrelator(tone(-math.pi * v / v_n, n))
        np.testing.assert_allclose(est.values, expected, atol=1e-9)
    edge = autocorrelator(tone(math.pi, n)).values
    np.testing.assert_allclose(np.abs(edge), v_n, atol=1e-9)


def test_zero_r1_flagged():
    r1 = np.array([[0j, 1j]])
    vmap = doppler_velocity_map(AutocorrMap(r1, np.ones((1, 2))), 0.8)
    assert vmap.values[0, 0] == 0 and not vmap.valid[0, 0] and vmap.valid[0, 1]


def test_reduce_packet():
    iq = tone(0.3, 8)
    red = reduce_packet(iq, 0, 2)
    assert red.shape[0] == 2 and red.params.packet_size == 2
    assert red.params.prf_hz == iq.params.prf_hz
    np.testing.assert_array_equal(red.data, iq.data[:2])
    assert np.array_equal(reduce_packet(iq, 0, 8).data, iq.data)
    for bad in [(0, 1), (7, 2), (-1, 2)]:
        with pytest.raises(ValueError):
            reduce_packet(iq, *bad)


def test_pair_slice_matches_pairwise_product():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((8, 5, 4)) + 1j * rng.standard_normal((8, 5, 4))
    iq = IQEnsemble(data, AcquisitionParams(packet_size=8, fast_time_samples=5, firings=4),
                    ScanGeometry(0.02, 0.05, 0.5, 5, 4))
    for k in range(7):
        r1 = lag_one_autocorrelation(reduce_packet(iq, k, 2)).r1
        np.testing.assert_array_equal(r1, np.conj(data[k]) * data[k + 1])


def test_n2_smoothing_order_equivalence():
    rng = np.random.default_rng(2)
    h, w = 14, 7
    s0 = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    s1 = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    smoothed = smooth_autocorrelation(lag_one_autocorrelation(np.stack([s0, s1])), 5, 3).r1
    prod = np.conj(s0) * s1
    wh, ww = np.hamming(5), np.hamming(3)
    oracle = np.zeros((h, w), complex)
    for i in range(h):
        for j in range(w):
            acc, mass = 0j, 0.0
            for a in range(-2, 3):
                for b in range(-1, 2):
                    if 0 <= i + a < h and 0 <= j + b < w:
                        weight = wh[a + 2] * ww[b + 1]
                        acc += weight * prod[i + a, j + b]
                        mass += weight
            oracle[i, j] = acc / mass
    np.testing.assert_allclose(np.angle(smoothed), np.angle(oracle), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.floats(-math.pi, math.pi))
def test_scaling_and_phasor_invariance(seed, scale, phase):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((4, 6, 5)) + 1j * rng.standard_normal((4, 6, 5))
    base = lag_one_autocorrelation(data).r1
    scaled = lag_one_autocorrelation(scale * data).r1
    rotated = lag_one_autocorrelation(np.exp(1j * phase) * data).r1
    np.testing.assert_allclose(np.angle(scaled), np.angle(base), atol=1e-9)
    np.testing.assert_allclose(rotated, base, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 3, 8]))
def test_estimates_within_nyquist(seed, n):
    rng = np.random.default_rng(seed)
    params = AcquisitionParams(packet_size=n, fast_time_samples=12, firings=6)
    data = rng.standard_normal((n, 12, 6)) + 1j * rng.standard_normal((n, 12, 6))
    est = autocorrelator(IQEnsemble(data, params, ScanGeometry(0.02, 0.05, 0.5, 12, 6)))
    assert np.all(np.abs(est.values) <= nyquist_velocity(params))
