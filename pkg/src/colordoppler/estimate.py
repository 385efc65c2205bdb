"""Lag-one autocorrelation Doppler estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .core import IQEnsemble, VelocityMap, nyquist_velocity, phase_to_velocity


@dataclass(frozen=True)
class AutocorrMap:
    r1: np.ndarray
    r0: np.ndarray


def _slow_time_stack(iq) -> np.ndarray:
    data = iq.data if isinstance(iq, IQEnsemble) else np.asarray(iq)
    return data.astype(np.complex128, copy=False)


def lag_one_autocorrelation(iq: IQEnsemble | np.ndarray) -> AutocorrMap:
    """``r1 = sum_k conj(s_k) s_{k+1}`` and mean power ``r0`` at every pixel."""
    s = _slow_time_stack(iq)
    if s.shape[0] < 2:
        raise ValueError("lag-one autocorrelation needs at least two slow-time samples")
    r1 = np.sum(np.conj(s[:-1]) * s[1:], axis=0)
    r0 = np.mean(s.real**2 + s.imag**2, axis=0)
    return AutocorrMap(r1, r0)


def hamming_kernel(kernel_h: int = 10, kernel_w: int = 4) -> np.ndarray:
    """Outer product of Hamming windows (axial x lateral)."""
    return np.outer(np.hamming(kernel_h), np.hamming(kernel_w))


def smooth_autocorrelation(
    ac: AutocorrMap, kernel_h: int = 10, kernel_w: int = 4, weights: np.ndarray | None = None
) -> AutocorrMap:
    """Hamming-weighted local mean of ``r1`` and ``r0``.

    Each output pixel is divided by the kernel mass that fell inside the grid,
    so constant fields are preserved up to the sector edges. ``weights``
    replaces the Hamming kernel when given.
    """
    h, w = ac.r1.shape
    kernel = hamming_kernel(kernel_h, kernel_w) if weights is None else np.asarray(weights, dtype=float)
    kernel_h, kernel_w = kernel.shape
    if not (1 <= kernel_h <= h and 1 <= kernel_w <= w):
        raise ValueError(f"kernel {kernel_h}x{kernel_w} does not fit a {h}x{w} grid")
    if np.any(kernel < 0) or not np.any(kernel > 0):
        raise ValueError("kernel weights must be nonnegative and not all zero")
    mass = convolve2d(np.ones((h, w)), kernel, mode="same")
    r1 = convolve2d(ac.r1, kernel, mode="same") / mass
    r0 = convolve2d(ac.r0, kernel, mode="same") / mass
    return AutocorrMap(r1, np.maximum(r0, 0.0))


def doppler_velocity_map(ac: AutocorrMap, nyquist_mps: float) -> VelocityMap:
    """``v = -v_N arg(r1) / pi``; pixels with ``r1 == 0`` get 0 and ``valid=False``."""
    valid = ac.r1 != 0
    phase = np.where(valid, np.angle(ac.r1), 0.0)
    return VelocityMap(phase_to_velocity(phase, nyquist_mps) + 0.0, nyquist_mps, valid)


def reduce_packet(iq: IQEnsemble, start_k: int, m: int) -> IQEnsemble:
    """Keep slow-time frames ``start_k .. start_k + m - 1``; the PRF is unchanged."""
    n = iq.shape[0]
    if m < 2 or start_k < 0 or start_k + m > n:
        raise ValueError(f"slice [{start_k}, {start_k + m}) is not a valid packet of {n} frames")
    return iq.with_data(iq.data[start_k : start_k + m])


def autocorrelator(
    iq: IQEnsemble, *, smooth: bool = True, kernel: tuple[int, int] = (10, 4)
) -> VelocityMap:
    """Full baseline: lag-one autocorrelation, Hamming smoothing, phase to velocity."""
    ac = lag_one_autocorrelation(iq)
    if smooth:
        ac = smooth_autocorrelation(ac, *kernel)
    return doppler_velocity_map(ac, nyquist_velocity(iq.params))
