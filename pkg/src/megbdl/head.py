"""Synthetic spherical head: source space, sensor array, lead fields, measurements.

All lengths are in meters.  The conductor is a homogeneous sphere centred at
the origin, so the magnetic field outside it has a closed form (Sarvas) that
does not depend on the conductivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, NumericalError, SilentSourceError

MU0 = 4e-7 * np.pi
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

MAGNETOMETER = "magnetometer"
GRADIOMETER = "planar-gradiometer"


@dataclass(frozen=True)
class GeometryConfig:
    """Radii and sensor layout of the synthetic head."""

    conductor_radius: float = 0.09
    source_radius: float = 0.079
    sensor_radius: float = 0.12
    # sensors cover the cap with polar angle <= this value (degrees)
    helmet_max_polar: float = 110.0
    gradiometers: bool = False
    gradiometer_baseline: float = 0.0168

    def validate(self):
        if not 0 < self.source_radius < self.conductor_radius:
            raise ConfigurationError(
                f"source shell radius {self.source_radius} must lie in "
                f"(0, conductor radius {self.conductor_radius})")
        if self.sensor_radius <= self.conductor_radius:
            raise ConfigurationError("sensors must lie outside the conductor")
        if not 0 < self.helmet_max_polar <= 180:
            raise ConfigurationError("helmet_max_polar must be in (0, 180]")
        if self.gradiometer_baseline <= 0:
            raise ConfigurationError("gradiometer baseline must be positive")


@dataclass(frozen=True, eq=False)
class SourceSpace:
    positions: np.ndarray      # (N, 3)
    orientations: np.ndarray   # (N, 3), unit rows
    region_of: np.ndarray      # (N,), region index in 0..L-1
    n_regions: int
    centers: np.ndarray | None = None   # seed dipole of each region, if known
    region_members: tuple = field(init=False)

    def __post_init__(self):
        members = tuple(np.flatnonzero(self.region_of == l) for l in range(self.n_regions))
        object.__setattr__(self, "region_members", members)
        for arr in (self.positions, self.orientations, self.region_of):
            arr.setflags(write=False)

    @property
    def n_dipoles(self):
        return len(self.positions)

    def region_sizes(self):
        return np.bincount(self.region_of, minlength=self.n_regions)


@dataclass(frozen=True, eq=False)
class SensorArray:
    positions: np.ndarray      # (m, 3)
    axes: np.ndarray           # (m, 3), measurement direction
    kinds: tuple               # per channel: MAGNETOMETER or GRADIOMETER
    # unit tangential direction of the gradient for gradiometers, zero otherwise
    grad_directions: np.ndarray
    baseline: float = 0.0168

    def __post_init__(self):
        for arr in (self.positions, self.axes, self.grad_directions):
            arr.setflags(write=False)

    @property
    def n_channels(self):
        return len(self.positions)

    def is_gradiometer(self):
        return np.array([k == GRADIOMETER for k in self.kinds], dtype=bool)


@dataclass(frozen=True)
class Activation:
    region: int
    dipole_indices: np.ndarray
    amplitudes: np.ndarray


@dataclass(frozen=True)
class Measurement:
    b_clean: np.ndarray
    b_noisy: np.ndarray
    noise_std: float
    y: np.ndarray


def fibonacci_sphere(n, max_polar=np.pi):
    """Quasi-uniform unit vectors on the cap ``polar angle <= max_polar``."""
    i = np.arange(n) + 0.5
    zmin = np.cos(max_polar)
    z = 1.0 - (1.0 - zmin) * i / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * GOLDEN_ANGLE
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def farthest_point_centers(points, k, start):
    """Indices of ``k`` farthest-point seeds, starting from index ``start``."""
    centers = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(centers)


def nearest_center(points, centers):
    d2 = ((points[:, None, :] - points[None, centers, :]) ** 2).sum(axis=-1)
    labels = np.argmin(d2, axis=1)
    # a center always belongs to its own region, even with duplicated positions
    labels[centers] = np.arange(len(centers))
    return labels


def build_source_space(n_dipoles, n_regions, geometry=None, rng_seed=0):
    """Sample dipoles on a spherical shell and parcel them into regions.

    Positions follow a randomly rotated Fibonacci lattice.  Orientations are
    random unit vectors projected onto the tangent plane (radial dipoles are
    magnetically silent in a spherical conductor).  Regions are Voronoi cells
    of farthest-point seeds.
    """
    geometry = geometry or GeometryConfig()
    geometry.validate()
    if not 1 <= n_regions <= n_dipoles:
        raise ConfigurationError(
            f"need 1 <= n_regions <= n_dipoles, got {n_regions} and {n_dipoles}")
    rng = np.random.default_rng(rng_seed)

    rot = Rotation.random(random_state=rng)
    unit = rot.apply(fibonacci_sphere(n_dipoles))
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    positions = geometry.source_radius * unit

    v = rng.standard_normal((n_dipoles, 3))
    v -= (v * unit).sum(axis=1, keepdims=True) * unit
    orientations = v / np.linalg.norm(v, axis=1, keepdims=True)

    centers = farthest_point_centers(positions, n_regions, int(rng.integers(n_dipoles)))
    region_of = nearest_center(positions, centers)
    return SourceSpace(positions, orientations, region_of, n_regions, centers)


def build_sensor_array(n_channels, geometry=None):
    """Radial magnetometers on a helmet cap, optionally with planar gradiometers.

    With gradiometers enabled the channels come in triplets per sensor site:
    one magnetometer and two orthogonal planar gradiometers, mimicking the
    306-channel layout.  ``n_channels`` is then rounded down to a multiple of 3.
    """
    geometry = geometry or GeometryConfig()
    geometry.validate()
    if n_channels < 1:
        raise ConfigurationError("need at least one channel")
    max_polar = np.deg2rad(geometry.helmet_max_polar)
    if not geometry.gradiometers:
        unit = fibonacci_sphere(n_channels, max_polar)
        return SensorArray(geometry.sensor_radius * unit, unit.copy(),
                           (MAGNETOMETER,) * n_channels, np.zeros((n_channels, 3)),
                           geometry.gradiometer_baseline)

    n_sites = n_channels // 3
    if n_sites < 1:
        raise ConfigurationError("gradiometer layout needs at least 3 channels")
    unit = fibonacci_sphere(n_sites, max_polar)
    e1 = np.cross(unit, [0.0, 0.0, 1.0])
    near_pole = np.linalg.norm(e1, axis=1) < 1e-8
    e1[near_pole] = np.cross(unit[near_pole], [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(unit, e1)
    pos = np.repeat(geometry.sensor_radius * unit, 3, axis=0)
    axes = np.repeat(unit, 3, axis=0)
    grads = np.zeros((3 * n_sites, 3))
    grads[1::3] = e1
    grads[2::3] = e2
    kinds = (MAGNETOMETER, GRADIOMETER, GRADIOMETER) * n_sites
    return SensorArray(pos, axes, kinds, grads, geometry.gradiometer_baseline)


def _sarvas_rows(r, n, rq):
    """Map dipole moment to ``B(r) . n`` for many (sensor, dipole) pairs.

    ``r`` and ``n`` have shape (m, 3), ``rq`` has shape (N, 3).  Returns an
    array of shape (m, N, 3) whose last axis contracts with the moment.
    """
    r = r[:, None, :]
    n = n[:, None, :]
    rq = rq[None, :, :]
    a_vec = r - rq
    a = np.linalg.norm(a_vec, axis=-1, keepdims=True)
    rn = np.linalg.norm(r, axis=-1, keepdims=True)
    a_dot_r = (a_vec * r).sum(axis=-1, keepdims=True)
    rq_dot_r = (rq * r).sum(axis=-1, keepdims=True)
    F = a * (rn * a + rn ** 2 - rq_dot_r)
    if np.any(F == 0):
        raise NumericalError("degenerate sensor/dipole configuration (F = 0)")
    gradF = (a ** 2 / rn + a_dot_r / a + 2 * a + 2 * rn) * r \
        - (a + 2 * rn + a_dot_r / a) * rq
    # B.n = mu0/(4 pi F^2) (q x rq) . (F n - (gradF . n) r) = q . (rq x v)
    v = F * n - (gradF * n).sum(axis=-1, keepdims=True) * r
    return MU0 / (4 * np.pi * F ** 2) * np.cross(np.broadcast_to(rq, v.shape), v)


def lead_field(positions, sensors):
    """Lead fields for dipoles at ``positions``: array of shape (N, m, 3).

    Slice ``[k]`` is the m x 3 matrix L_k mapping a moment to channel readings.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    grad = sensors.is_gradiometer()
    out = np.empty((len(positions), sensors.n_channels, 3))
    mag = ~grad
    if mag.any():
        rows = _sarvas_rows(sensors.positions[mag], sensors.axes[mag], positions)
        out[:, mag, :] = rows.transpose(1, 0, 2)
    if grad.any():
        h = sensors.baseline
        shift = 0.5 * h * sensors.grad_directions[grad]
        plus = _sarvas_rows(sensors.positions[grad] + shift, sensors.axes[grad], positions)
        minus = _sarvas_rows(sensors.positions[grad] - shift, sensors.axes[grad], positions)
        out[:, grad, :] = ((plus - minus) / h).transpose(1, 0, 2)
    return out


def field_at(position, moment, sensors):
    """Channel readings of a single dipole."""
    return lead_field(position, sensors)[0] @ np.asarray(moment, dtype=float)


def simulate_patch(space, region, rng_seed, patch_size=6):
    """Activate a seed dipole of ``region`` and its nearest in-region neighbours."""
    if not 0 <= region < space.n_regions:
        raise ValueError(f"invalid region index {region}")
    rng = np.random.default_rng(rng_seed)
    members = space.region_members[region]
    seed = members[rng.integers(len(members))]
    dist = np.linalg.norm(space.positions[members] - space.positions[seed], axis=1)
    order = np.argsort(dist, kind="stable")
    patch = members[order[:min(patch_size, len(members))]]
    # keep the seed first even if another member sits at distance zero
    patch = np.concatenate([[seed], patch[patch != seed]])[:len(patch)]
    amplitudes = rng.uniform(0.0, 1.0, size=len(patch))
    return Activation(region, patch, amplitudes)


def clean_field(space, sensors, activation):
    idx = activation.dipole_indices
    moments = activation.amplitudes[:, None] * space.orientations[idx]
    leads = lead_field(space.positions[idx], sensors)
    return np.einsum("kmj,kj->m", leads, moments)


def measure(space, sensors, activation, noise_fraction=0.005, rng_seed=0):
    """Noisy, normalized sensor data for an activation."""
    if noise_fraction < 0:
        raise ValueError("noise_fraction must be nonnegative")
    b_clean = clean_field(space, sensors, activation)
    peak = np.max(np.abs(b_clean))
    # relative to the field scale a single unit dipole would produce (~1e-13 T)
    if peak == 0 or peak < 1e-12 * _reference_scale(space, sensors):
        raise SilentSourceError("activation produces no measurable field")
    noise_std = noise_fraction * peak
    rng = np.random.default_rng(rng_seed)
    b_noisy = b_clean + noise_std * rng.standard_normal(len(b_clean)) if noise_std > 0 \
        else b_clean.copy()
    y = b_noisy / np.linalg.norm(b_noisy)
    return Measurement(b_clean, b_noisy, float(noise_std), y)


def _reference_scale(space, sensors):
    # field of a unit tangential dipole at the source shell, seen from the sensor shell
    rs = np.linalg.norm(space.positions, axis=1).max()
    rsens = np.linalg.norm(sensors.positions, axis=1).min()
    return MU0 / (4 * np.pi) * rs / (rsens - rs) ** 3 if rsens > rs else 1.0


def rotated(space, sensors, rotation):
    """Apply an orthogonal 3x3 matrix to every geometric vector."""
    R = np.asarray(rotation, dtype=float)
    sp = SourceSpace(space.positions @ R.T, space.orientations @ R.T,
                     space.region_of.copy(), space.n_regions, space.centers)
    se = SensorArray(sensors.positions @ R.T, sensors.axes @ R.T, sensors.kinds,
                     sensors.grad_directions @ R.T, sensors.baseline)
    return sp, se
