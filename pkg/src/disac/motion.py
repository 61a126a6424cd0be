"""Nearly-constant-velocity target dynamics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConfigError


@dataclass(frozen=True)
class MotionConfig:
    dt: float = 0.1
    accel_std: tuple[float, float, float] = (0.05, 0.05, 0.0)
    survival_prob: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "accel_std", tuple(float(a) for a in self.accel_std))
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if len(self.accel_std) != 3 or min(self.accel_std) < 0:
            raise ConfigError("accel_std must be three non-negative values")
        if not 0.0 <= self.survival_prob <= 1.0:
            raise ConfigError("survival_prob outside [0, 1]")


def transition_matrix(cfg: MotionConfig) -> np.ndarray:
    F = np.eye(6)
    F[:3, 3:] = cfg.dt * np.eye(3)
    return F


def cv_predict_mean(x, cfg: MotionConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[:3] = x[:3] + cfg.dt * x[3:6]
    return out


def process_noise_cov(cfg: MotionConfig) -> np.ndarray:
    """Discretised white-noise-acceleration covariance, (position, velocity) ordering."""
    dt = cfg.dt
    block = np.array([[dt**4 / 4, dt**3 / 2], [dt**3 / 2, dt**2]])
    Q = np.zeros((6, 6))
    for axis, sigma in enumerate(cfg.accel_std):
        idx = [axis, axis + 3]
        Q[np.ix_(idx, idx)] = sigma**2 * block
    return Q


def noise_gain(cfg: MotionConfig) -> np.ndarray:
    """G with Q = G G^T; the per-axis block has rank one."""
    dt = cfg.dt
    sig = np.asarray(cfg.accel_std)
    return np.vstack([np.diag(sig * dt**2 / 2), np.diag(sig * dt)])


def sample_transition(x, cfg: MotionConfig, rng: np.random.Generator) -> np.ndarray:
    return cv_predict_mean(x, cfg) + noise_gain(cfg) @ rng.standard_normal(3)


def survival_probability(x, cfg: MotionConfig) -> float:
    return cfg.survival_prob
