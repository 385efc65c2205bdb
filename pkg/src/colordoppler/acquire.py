"""Baseband I/Q synthesis from moving scatterers.

Instead of simulating element RF data and beamforming it, every scatterer
contributes a separable Gaussian point-spread function (axial x lateral)
carrying the two-way carrier phase ``exp(-i 4 pi f_c r / c)``. Line ``j`` is
fired ``n`` times in a row, so shot ``(j, k)`` happens at ``(j n + k) / PRF``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AcquisitionParams, IQEnsemble, NumericError, ScanGeometry
from .phantom import PhantomState, step_scatterers, truth_radial_map

FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))


@dataclass(frozen=True)
class PsfModel:
    """Separable Gaussian PSF.

    ``truncation`` is the half-width, in standard deviations, beyond which a
    scatterer's contribution is dropped; at 6 sigma the neglected tail is
    below 2e-8 of the peak.
    """

    axial_sigma_m: float
    lateral_sigma_rad: float
    center_frequency_hz: float
    sound_speed_mps: float
    truncation: float = 6.0

    def __post_init__(self):
        if self.axial_sigma_m <= 0 or self.lateral_sigma_rad <= 0:
            raise ValueError("PSF widths must be > 0")

    def lateral_sigma(self, r):
        """Angular beam width at range ``r``; constant for an ideally focused aperture."""
        return np.full(np.shape(r), self.lateral_sigma_rad)

    @property
    def carrier_wavenumber(self) -> float:
        """Two-way wavenumber ``4 pi f_c / c`` (rad/m)."""
        return 4 * math.pi * self.center_frequency_hz / self.sound_speed_mps


def default_psf(params: AcquisitionParams, geometry: ScanGeometry | None = None) -> PsfModel:
    """PSF sized from the pulse length and the aperture.

    The axial FWHM equals the two-way pulse extent ``cycles / f_c * c / 2``;
    the lateral beam has an ``0.42 lambda r / D`` standard deviation at range
    ``r``, i.e. ``0.42 lambda / D`` radians.
    """
    pulse_extent = params.cycles_doppler / params.center_frequency_hz * params.sound_speed_mps / 2
    return PsfModel(
        axial_sigma_m=pulse_extent / FWHM_PER_SIGMA,
        lateral_sigma_rad=0.42 * params.wavelength_m / params.aperture_m,
        center_frequency_hz=params.center_frequency_hz,
        sound_speed_mps=params.sound_speed_mps,
    )


def resolution_cell_area_m2(params: AcquisitionParams, range_m: float) -> float:
    """Axial pulse extent times lateral beam width (``lambda r / D``) at ``range_m``."""
    pulse_extent = params.cycles_doppler / params.center_frequency_hz * params.sound_speed_mps / 2
    return pulse_extent * params.wavelength_m * range_m / params.aperture_m


def shot_times(params: AcquisitionParams) -> np.ndarray:
    """``(w, n)`` array of firing instants for line ``j``, slow-time index ``k``."""
    w, n = params.firings, params.packet_size
    return (np.arange(w)[:, None] * n + np.arange(n)[None, :]) / params.prf_hz


def _polar(positions, geometry):
    dx = positions[:, 0] - geometry.apex_position[0]
    dz = positions[:, 1] - geometry.apex_position[1]
    return np.sqrt(dx * dx + dz * dz), np.arctan2(dx, dz)


def beam_column(r, theta, amplitude, beam_angle, geometry, psf) -> np.ndarray:
    """Complex samples along one beam from scatterers at polar ``(r, theta)``.

    Only scatterers within ``psf.truncation`` widths of the beam (laterally)
    and of each sample (axially) are summed. Accumulation uses ``bincount``,
    whose summation order is fixed by the scatterer order.
    """
    h = geometry.h
    r0, dr = geometry.depth_min_m, geometry.range_step_m
    sig_ax = psf.axial_sigma_m
    reach = psf.truncation * sig_ax
    sig_lat = psf.lateral_sigma(r)
    dtheta = theta - beam_angle
    near = (np.abs(dtheta) <= psf.truncation * sig_lat) & (r >= r0 - reach) & (r <= r0 + (h - 1) * dr + reach)
    if not np.any(near):
        return np.zeros(h, np.complex128)
    r, dtheta, amp, sig = r[near], dtheta[near], amplitude[near], sig_lat[near]
    weight = amp * np.exp(-0.5 * (dtheta / sig) ** 2)
    phasor = weight * np.exp(-1j * psf.carrier_wavenumber * r)
    first = np.ceil((r - reach - r0) / dr).astype(np.int64)
    width = int(math.floor(2 * reach / dr)) + 2
    idx = first[:, None] + np.arange(width)
    dist = (r0 - r)[:, None] + idx * dr
    env = np.exp(dist * dist * (-0.5 / sig_ax**2))
    # out-of-grid or out-of-reach taps are zeroed and parked on a valid index
    env[np.abs(dist) > reach] = 0.0
    outside = (idx < 0) | (idx >= h)
    env[outside] = 0.0
    idx[outside] = 0
    idx = idx.ravel()
    re = np.bincount(idx, weights=(env * phasor.real[:, None]).ravel(), minlength=h)
    im = np.bincount(idx, weights=(env * phasor.imag[:, None]).ravel(), minlength=h)
    return re + 1j * im


def synthesize_ensemble(
    state: PhantomState,
    geometry: ScanGeometry,
    params: AcquisitionParams,
    psf: PsfModel | None = None,
    noise_snr_db: float | None = None,
    seed=0,
    roi: np.ndarray | None = None,
) -> IQEnsemble:
    """Simulate the focused line-by-line Doppler sequence of a phantom.

    The phantom is advanced by one Euler step of ``1 / PRF`` between
    consecutive shots (fluctuations drawn from ``seed``). If ``noise_snr_db``
    is given, white circular Gaussian noise is added so that the SNR over
    ``roi`` (default: pixels inside the phantom support) matches it.
    """
    if len(state) == 0:
        raise NumericError("phantom has no scatterers")
    if (geometry.h, geometry.w) != (params.fast_time_samples, params.firings):
        raise ValueError("geometry grid and acquisition parameters disagree")
    psf = psf or default_psf(params, geometry)
    motion_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(motion_seed)
    n, w, h = params.packet_size, params.firings, params.fast_time_samples
    dt = 1.0 / params.prf_hz
    # bound on how far a scatterer can travel during one line (8-sigma fluctuations)
    travel = state.flow.max_speed * (1 + 8 * state.flow.fluctuation_frac) * n * dt
    lateral_reach = psf.truncation * psf.lateral_sigma_rad
    beams = geometry.angles()
    data = np.empty((n, h, w), np.complex128)
    for j in range(w):
        r, theta = _polar(state.positions, geometry)
        slack = travel / np.maximum(r - travel, 1e-9)
        candidates = np.flatnonzero(np.abs(theta - beams[j]) <= lateral_reach + slack)
        for k in range(n):
            pos = state.positions[candidates]
            r, theta = _polar(pos, geometry)
            data[k, :, j] = beam_column(r, theta, state.reflectivity[candidates], beams[j], geometry, psf)
            state, respawned = step_scatterers(state, dt, rng)
            if len(respawned):
                candidates = np.union1d(candidates, respawned)
    iq = IQEnsemble(data, params, geometry)
    if noise_snr_db is not None and math.isfinite(noise_snr_db):
        if roi is None:
            _, roi = truth_radial_map(state, geometry)
        iq = add_noise(iq, noise_snr_db, roi, noise_seed)
    return iq


def add_noise(iq: IQEnsemble, snr_db: float | None, roi: np.ndarray, seed) -> IQEnsemble:
    """Add circular complex white Gaussian noise at ``snr_db`` relative to the ROI power."""
    if snr_db is None or snr_db == math.inf:
        return iq
    if not math.isfinite(snr_db):
        raise ValueError(f"SNR must be finite or +inf, got {snr_db}")
    roi = np.asarray(roi, bool)
    if not roi.any():
        raise NumericError("noise ROI is empty")
    signal_power = np.mean(np.abs(iq.data[:, roi]) ** 2)
    if signal_power == 0:
        raise NumericError("signal power over the ROI is zero")
    noise_power = signal_power / 10 ** (snr_db / 10)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(iq.shape + (2,)) * math.sqrt(noise_power / 2)
    return IQEnsemble(iq.data + (noise[..., 0] + 1j * noise[..., 1]), iq.params, iq.geometry)
