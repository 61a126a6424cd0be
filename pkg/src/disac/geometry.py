"""Base-station geometry, field of view and the TOA/AOA measurement model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

SPEED_OF_LIGHT = 299_792_458.0

# Internal measurement space used by the filter: TOA rescaled to one-way range
# in meters, angles unchanged. Keeps innovation covariances well conditioned.
TOA_TO_RANGE = SPEED_OF_LIGHT / 2.0
MEAS_SCALE = np.array([TOA_TO_RANGE, 1.0, 1.0])


class ConfigError(ValueError):
    """Invalid scenario, sensor or filter configuration."""


class DegenerateGeometryError(ValueError):
    """Target position coincides with the sensor position."""


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


@dataclass
class BsConfig:
    id: int
    position: np.ndarray
    fov_radius: float
    detection_prob_inside: float
    clutter_rate: float
    measurement_noise_cov: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        self.measurement_noise_cov = np.asarray(self.measurement_noise_cov, dtype=float).reshape(3, 3)
        rot = self.orientation
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise ConfigError(f"BS {self.id}: orientation is not a proper rotation")
        if not self.fov_radius > 0:
            raise ConfigError(f"BS {self.id}: fov_radius must be positive")
        if not 0.0 <= self.detection_prob_inside <= 1.0:
            raise ConfigError(f"BS {self.id}: detection probability outside [0, 1]")
        if self.clutter_rate < 0:
            raise ConfigError(f"BS {self.id}: negative clutter rate")
        cov = self.measurement_noise_cov
        if not np.allclose(cov, cov.T):
            raise ConfigError(f"BS {self.id}: measurement noise covariance not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigError(f"BS {self.id}: measurement noise covariance not positive definite") from None

    @property
    def scaled_noise_cov(self) -> np.ndarray:
        """Noise covariance in the range-scaled measurement space."""
        return self.measurement_noise_cov * np.outer(MEAS_SCALE, MEAS_SCALE)

    @property
    def clutter_box(self) -> tuple[tuple[float, float], ...]:
        return ((0.0, 2.0 * self.fov_radius / SPEED_OF_LIGHT), (-np.pi, np.pi), (-np.pi / 2, np.pi / 2))

    @property
    def clutter_box_volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.clutter_box]))

    def clutter_intensity(self) -> float:
        """Clutter intensity value c(z) in the native (s, rad, rad) space."""
        return self.clutter_rate / self.clutter_box_volume

    def scaled_clutter_intensity(self) -> float:
        return self.clutter_intensity() / TOA_TO_RANGE


class Measurement(NamedTuple):
    toa: float
    azimuth: float
    elevation: float


@dataclass
class MeasurementSet:
    """Measurements of one scan; ``z`` is an (n, 3) array of (toa, azimuth, elevation)."""

    time_step: int
    z: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1, 3)

    @property
    def items(self) -> list[Measurement]:
        return [Measurement(*row) for row in self.z]

    def __len__(self):
        return len(self.z)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _local(bs: BsConfig, pos) -> np.ndarray:
    d = bs.orientation.T @ (np.asarray(pos, dtype=float)[:3] - bs.position)
    if not np.any(d):
        raise DegenerateGeometryError("position coincides with base station")
    return d


def range_angles(bs: BsConfig, pos) -> np.ndarray:
    """(one-way range, azimuth, elevation) of ``pos`` seen from ``bs``."""
    x, y, z = _local(bs, pos)
    rho = np.hypot(x, y)
    return np.array([np.sqrt(rho * rho + z * z), np.arctan2(y, x), np.arctan2(z, rho)])


def range_angles_jacobian(bs: BsConfig, pos) -> np.ndarray:
    """3x6 Jacobian of :func:`range_angles` with respect to [position, velocity]."""
    d = _local(bs, pos)
    x, y, z = d
    rho2 = x * x + y * y
    r2 = rho2 + z * z
    r = np.sqrt(r2)
    rho = np.sqrt(rho2)
    jac_local = np.zeros((3, 3))
    jac_local[0] = d / r
    if rho2 > 0:
        jac_local[1] = [-y / rho2, x / rho2, 0.0]
        jac_local[2] = [-x * z / (r2 * rho), -y * z / (r2 * rho), rho / r2]
    else:
        # straight above/below: azimuth undefined, elevation stationary
        jac_local[2] = [0.0, 0.0, 0.0]
    out = np.zeros((3, 6))
    out[:, :3] = jac_local @ bs.orientation.T
    return out


def measurement_fn(bs: BsConfig, pos) -> Measurement:
    rng_, az, el = range_angles(bs, pos)
    return Measurement(2.0 * rng_ / SPEED_OF_LIGHT, float(az), float(el))


def measurement_jacobian(bs: BsConfig, pos) -> np.ndarray:
    """Jacobian of (toa, azimuth, elevation) with respect to the 6-d target state."""
    jac = range_angles_jacobian(bs, pos)
    jac[0] /= TOA_TO_RANGE
    return jac


def inverse_measurement(bs: BsConfig, z) -> np.ndarray:
    """Cartesian position that produces the noiseless measurement ``z`` (toa in seconds)."""
    toa, az, el = z
    return _inverse_scaled(bs, np.array([toa * TOA_TO_RANGE, az, el]))


def _inverse_scaled(bs: BsConfig, zs) -> np.ndarray:
    r, az, el = zs
    local = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return bs.position + bs.orientation @ local


def in_fov(bs: BsConfig, pos) -> bool:
    return bool(np.linalg.norm(np.asarray(pos, dtype=float)[:3] - bs.position) <= bs.fov_radius)


def detection_probability(bs: BsConfig, pos) -> float:
    return bs.detection_prob_inside if in_fov(bs, pos) else 0.0


def log_likelihood(z, bs: BsConfig, pos) -> float:
    """log N(z; h(pos), R) in the native measurement units."""
    h = np.array(measurement_fn(bs, pos))
    resid = np.asarray(z, dtype=float) - h
    resid[1] = wrap_angle(resid[1])
    cov = bs.measurement_noise_cov
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, resid)
    return float(-0.5 * sol @ sol - np.log(np.diag(chol)).sum() - 1.5 * np.log(2 * np.pi))


def sample_detections_and_clutter(bs: BsConfig, true_positions, rng: np.random.Generator,
                                  time_step: int = 0) -> MeasurementSet:
    rows = []
    chol = np.linalg.cholesky(bs.measurement_noise_cov)
    for pos in true_positions:
        pd = detection_probability(bs, pos)
        if pd > 0 and rng.random() < pd:
            z = np.array(measurement_fn(bs, pos)) + chol @ rng.standard_normal(3)
            z[1] = wrap_angle(z[1])
            z[2] = np.clip(z[2], -np.pi / 2, np.pi / 2)
            z[0] = max(z[0], 0.0)
            rows.append(z)
    n_clutter = rng.poisson(bs.clutter_rate)
    if n_clutter:
        lo, hi = np.array(bs.clutter_box).T
        u = rng.random((n_clutter, 3))
        clutter = lo + u * (hi - lo)
        # half-open (-pi, pi]
        clutter[:, 1] = np.where(clutter[:, 1] == -np.pi, np.pi, clutter[:, 1])
        rows.extend(clutter)
    z = np.array(rows).reshape(-1, 3)
    z = z[rng.permutation(len(z))]
    return MeasurementSet(time_step, z)
