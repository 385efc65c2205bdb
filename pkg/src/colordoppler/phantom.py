"""Scatterer phantoms with analytic flow fields.

Points are ``(x, z)`` pairs in metres with the probe apex at the origin and
``z`` pointing away from the probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import AcquisitionParams, ScanGeometry


# --- flow fields --------------------------------------------------------------


@dataclass(frozen=True, kw_only=True)
class FlowField:
    fluctuation_frac: float = 0.1

    def velocity(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def max_speed(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True, kw_only=True)
class RigidRotation(FlowField):
    """Solid-body rotation inside a disk; ``omega > 0`` turns from +x towards +z."""

    center: tuple[float, float]
    omega_rad_s: float
    radius_m: float

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("radius must be > 0")

    def velocity(self, points):
        p = np.asarray(points, dtype=float)
        dx = p[..., 0] - self.center[0]
        dz = p[..., 1] - self.center[1]
        scale = self.omega_rad_s * (dx * dx + dz * dz <= self.radius_m**2)
        v = np.empty(p.shape)
        np.multiply(-dz, scale, out=v[..., 0])
        np.multiply(dx, scale, out=v[..., 1])
        return v

    @property
    def max_speed(self):
        return abs(self.omega_rad_s) * self.radius_m


@dataclass(frozen=True, kw_only=True)
class LambOseenVortex(FlowField):
    """Lamb-Oseen vortex: ``v_theta = G / (2 pi rho) * (1 - exp(-rho^2 / a^2))``."""

    center: tuple[float, float]
    circulation: float
    core_radius: float

    def __post_init__(self):
        if self.core_radius <= 0:
            raise ValueError("core_radius must be > 0")

    def tangential_speed(self, rho):
        rho = np.asarray(rho, dtype=float)
        a2 = self.core_radius**2
        small = rho < 1e-6 * self.core_radius
        safe = np.where(small, 1.0, rho)
        # series for the removable singularity at rho = 0
        v = np.where(
            small,
            self.circulation * rho / (2 * np.pi * a2),
            self.circulation / (2 * np.pi * safe) * -np.expm1(-(safe**2) / a2),
        )
        return v

    def velocity(self, points):
        p = np.asarray(points, dtype=float)
        d = p - np.asarray(self.center)
        rho = np.hypot(d[..., 0], d[..., 1])
        vt = self.tangential_speed(rho)
        safe = np.where(rho > 0, rho, 1.0)
        unit_t = np.stack([-d[..., 1], d[..., 0]], axis=-1) / safe[..., None]
        return vt[..., None] * unit_t

    @property
    def max_speed(self):
        # profile peaks at rho = 1.1209 a
        return abs(float(self.tangential_speed(1.1209 * self.core_radius)))


@dataclass(frozen=True, kw_only=True)
class UniformFlow(FlowField):
    velocity_vector: tuple[float, float]

    def velocity(self, points):
        p = np.asarray(points, dtype=float)
        return np.broadcast_to(np.asarray(self.velocity_vector, dtype=float), p.shape).copy()

    @property
    def max_speed(self):
        return float(np.hypot(*self.velocity_vector))


@dataclass(frozen=True, kw_only=True)
class RadialFlow(FlowField):
    """Motion straight along the beams at a fixed speed (positive = away from ``origin``)."""

    speed_mps: float
    origin: tuple[float, float] = (0.0, 0.0)

    def velocity(self, points):
        d = np.asarray(points, dtype=float) - np.asarray(self.origin)
        rho = np.hypot(d[..., 0], d[..., 1])
        return self.speed_mps * d / np.where(rho > 0, rho, 1.0)[..., None]

    @property
    def max_speed(self):
        return abs(self.speed_mps)


def flow_velocity(flow: FlowField, points) -> np.ndarray:
    return flow.velocity(points)


# --- supports -----------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        dx = p[..., 0] - self.center[0]
        dz = p[..., 1] - self.center[1]
        return dx * dx + dz * dz <= self.radius**2

    @property
    def area(self):
        return math.pi * self.radius**2

    def sample(self, rng, count):
        rho = self.radius * np.sqrt(rng.random(count))
        phi = 2 * np.pi * rng.random(count)
        return np.stack([self.center[0] + rho * np.cos(phi), self.center[1] + rho * np.sin(phi)], -1)


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if not 0 <= self.inner_radius < self.outer_radius:
            raise ValueError("require 0 <= inner_radius < outer_radius")

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        rho = np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1])
        return (rho >= self.inner_radius) & (rho <= self.outer_radius)

    @property
    def area(self):
        return math.pi * (self.outer_radius**2 - self.inner_radius**2)

    def sample(self, rng, count):
        r0, r1 = self.inner_radius**2, self.outer_radius**2
        rho = np.sqrt(r0 + (r1 - r0) * rng.random(count))
        phi = 2 * np.pi * rng.random(count)
        return np.stack([self.center[0] + rho * np.cos(phi), self.center[1] + rho * np.sin(phi)], -1)


@dataclass(frozen=True)
class SectorRegion:
    """Polar window ``r_min <= r <= r_max``, ``theta_min <= theta <= theta_max`` around the apex."""

    r_min: float
    r_max: float
    theta_min: float
    theta_max: float

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        r = np.hypot(p[..., 0], p[..., 1])
        theta = np.arctan2(p[..., 0], p[..., 1])
        return (r >= self.r_min) & (r <= self.r_max) & (theta >= self.theta_min) & (theta <= self.theta_max)

    @property
    def area(self):
        return 0.5 * (self.theta_max - self.theta_min) * (self.r_max**2 - self.r_min**2)

    def sample(self, rng, count):
        r = np.sqrt(self.r_min**2 + (self.r_max**2 - self.r_min**2) * rng.random(count))
        theta = self.theta_min + (self.theta_max - self.theta_min) * rng.random(count)
        return np.stack([r * np.sin(theta), r * np.cos(theta)], -1)


# --- phantom state --------------------------------------------------------------


def rayleigh_amplitudes(rng, count):
    """Speckle amplitudes: moduli of standard complex normal pairs."""
    return np.hypot(rng.standard_normal(count), rng.standard_normal(count))


@dataclass(frozen=True)
class PhantomState:
    positions: np.ndarray
    reflectivity: np.ndarray
    flow: FlowField
    support: Disk | Annulus | SectorRegion
    time_s: float = 0.0

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, 2)
        refl = np.ascontiguousarray(self.reflectivity, dtype=float).reshape(-1)
        if len(pos) != len(refl):
            raise ValueError("positions and reflectivity lengths differ")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(refl))):
            raise ValueError("scatterer positions and reflectivities must be finite")
        pos.flags.writeable = False
        refl.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "reflectivity", refl)

    def __len__(self):
        return len(self.reflectivity)


def populate(flow, support, density_per_mm2, seed) -> PhantomState:
    """Poisson-distributed scatterer count, uniform positions, Rayleigh amplitudes."""
    if density_per_mm2 <= 0:
        raise ValueError("scatterer density must be > 0")
    rng = np.random.default_rng(seed)
    count = rng.poisson(density_per_mm2 * support.area * 1e6)
    return PhantomState(support.sample(rng, count), rayleigh_amplitudes(rng, count), flow, support)


def make_disk_phantom(
    center_range_m,
    radius_m,
    v_max_mps,
    density_per_mm2,
    seed,
    *,
    center_angle_rad=0.0,
    clockwise=False,
    fluctuation_frac=0.1,
) -> PhantomState:
    """Rotating disk whose rim moves at ``v_max_mps``.

    The disk center sits ``center_range_m`` from the apex along the beam at
    ``center_angle_rad``.
    """
    if radius_m <= 0:
        raise ValueError("radius must be > 0")
    if v_max_mps < 0:
        raise ValueError("v_max must be >= 0")
    center = (center_range_m * math.sin(center_angle_rad), center_range_m * math.cos(center_angle_rad))
    omega = v_max_mps / radius_m * (-1 if clockwise else 1)
    flow = RigidRotation(center=center, omega_rad_s=omega, radius_m=radius_m, fluctuation_frac=fluctuation_frac)
    return populate(flow, Disk(center, radius_m), density_per_mm2, seed)


def make_vortex_phantom(
    center, circulation, core_radius, support, density_per_mm2, seed, *, fluctuation_frac=0.1
) -> PhantomState:
    flow = LambOseenVortex(
        center=tuple(center), circulation=circulation, core_radius=core_radius, fluctuation_frac=fluctuation_frac
    )
    return populate(flow, support, density_per_mm2, seed)


def advance_scatterers(state: PhantomState, dt_s: float, rng) -> PhantomState:
    """One explicit Euler step with proportional Gaussian velocity fluctuations.

    Scatterers leaving the support are re-drawn uniformly inside it with a
    fresh amplitude, keeping the population size fixed.
    """
    return step_scatterers(state, dt_s, rng)[0]


def step_scatterers(state: PhantomState, dt_s: float, rng) -> tuple[PhantomState, np.ndarray]:
    """Like :func:`advance_scatterers`, also returning the indices that were respawned."""
    if dt_s < 0:
        raise ValueError("dt must be >= 0")
    if dt_s == 0:
        return state, np.empty(0, np.int64)
    p = state.positions
    v = state.flow.velocity(p)
    frac = state.flow.fluctuation_frac
    if frac > 0:
        sigma = frac * np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2)
        v += rng.standard_normal(v.shape) * sigma[:, None]
    v *= dt_s
    new = v
    new += p
    refl = state.reflectivity
    out = np.flatnonzero(~state.support.contains(new))
    if len(out):
        refl = refl.copy()
        new[out] = state.support.sample(rng, len(out))
        refl[out] = rayleigh_amplitudes(rng, len(out))
    return replace(state, positions=new, reflectivity=refl, time_s=state.time_s + dt_s), out


def truth_radial_map(
    state: PhantomState, geometry: ScanGeometry, params: AcquisitionParams | None = None, t_eval_s: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Alias-free radial velocity (m/s, positive away from the probe) and support mask.

    Flow fields are stationary, so ``params`` and ``t_eval_s`` do not change the
    result; they are accepted for interface symmetry with the simulator.
    """
    x, z = geometry.pixel_positions()
    pts = np.stack([x, z], axis=-1)
    v = state.flow.velocity(pts)
    ux, uz = x - geometry.apex_position[0], z - geometry.apex_position[1]
    norm = np.hypot(ux, uz)
    norm = np.where(norm > 0, norm, 1.0)
    radial = (v[..., 0] * ux + v[..., 1] * uz) / norm
    mask = state.support.contains(pts)
    return np.where(mask, radial, 0.0), mask
