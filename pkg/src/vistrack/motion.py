"""
Constant-velocity Kalman filter over (cx, cy, s, r) box state.

cx, cy: box centre; s: area; r: aspect ratio w/h.  Noise standard deviations
scale with box height for the centre (position weight 1/20, velocity weight
1/160 by default) and relatively, at twice those weights, for area and aspect.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from vistrack.masks import BoundingBox

logger = logging.getLogger(__name__)

__all__ = [
    "CHI2_4DOF_95",
    "NoiseModel",
    "KalmanState",
    "box_to_measurement",
    "measurement_to_box",
    "kf_init",
    "kf_predict",
    "kf_update",
    "project",
    "mahalanobis_sq",
    "mahalanobis_sq_many",
    "gate",
]

# chi-square 0.95 quantile, 4 degrees of freedom
CHI2_4DOF_95 = 9.4877

_F = np.eye(8)
_F[:4, 4:] = np.eye(4)
_H = np.eye(4, 8)


@dataclass(frozen=True)
class NoiseModel:
    pos_weight: float = 1.0 / 20
    vel_weight: float = 1.0 / 160
    # diffuse velocity prior: a fresh track's motion is unknown
    init_vel_factor: float = 1000.0

    def _stds(self, mean: np.ndarray, pos_factor: float, vel_factor: float) -> np.ndarray:
        s, r = max(mean[2], 1e-12), max(mean[3], 1e-12)
        h = np.sqrt(s / r)
        wp, wv = pos_factor * self.pos_weight, vel_factor * self.vel_weight
        return np.array([
            wp * h, wp * h, 2 * wp * s, 2 * wp * r,
            wv * h, wv * h, 2 * wv * s, 2 * wv * r,
        ])

    def initial_cov(self, mean: np.ndarray) -> np.ndarray:
        return np.diag(self._stds(mean, 2.0, self.init_vel_factor) ** 2)

    def process_cov(self, mean: np.ndarray) -> np.ndarray:
        return np.diag(self._stds(mean, 1.0, 1.0) ** 2)

    def measurement_cov(self, mean: np.ndarray) -> np.ndarray:
        return np.diag(self._stds(mean, 1.0, 1.0)[:4] ** 2)


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != (8,) or self.covariance.shape != (8, 8):
            raise ValueError("Kalman state must be an 8-vector with 8x8 covariance")

    @property
    def box(self) -> BoundingBox:
        return measurement_to_box(self.mean[:4])


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    w, h = box.width, box.height
    if not (w > 0 and h > 0):
        raise ValueError(f"box must have positive area, got {box}")
    return np.array([box.x_min + w / 2.0, box.y_min + h / 2.0, w * h, w / h])


def measurement_to_box(z: np.ndarray) -> BoundingBox:
    cx, cy, s, r = z
    w = np.sqrt(max(s * r, 0.0))
    h = w / r if r > 0 else 0.0
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def _check_finite(state: KalmanState):
    if not (np.isfinite(state.mean).all() and np.isfinite(state.covariance).all()):
        raise ValueError("non-finite Kalman state")


def kf_init(box: BoundingBox, noise: NoiseModel = NoiseModel()) -> KalmanState:
    mean = np.zeros(8)
    mean[:4] = box_to_measurement(box)
    return KalmanState(mean, noise.initial_cov(mean))


def kf_predict(state: KalmanState, noise: NoiseModel = NoiseModel()) -> KalmanState:
    _check_finite(state)
    mean = _F @ state.mean
    # keep area positive when a shrinking track coasts
    if mean[2] <= 0:
        mean[6] = 0.0
        mean[2] = state.mean[2]
    cov = _F @ state.covariance @ _F.T + noise.process_cov(state.mean)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def project(state: KalmanState, noise: NoiseModel = NoiseModel()) -> tuple[np.ndarray, np.ndarray]:
    """Predicted measurement mean and innovation covariance."""
    cov = _H @ state.covariance @ _H.T + noise.measurement_cov(state.mean)
    return state.mean[:4].copy(), 0.5 * (cov + cov.T)


def kf_update(state: KalmanState, box: BoundingBox, noise: NoiseModel = NoiseModel()) -> KalmanState:
    _check_finite(state)
    z = box_to_measurement(box)
    z_pred, s_cov = project(state, noise)
    pht = state.covariance @ _H.T
    gain = np.linalg.solve(s_cov, pht.T).T
    mean = state.mean + gain @ (z - z_pred)
    # Joseph form keeps the covariance symmetric positive semi-definite
    ikh = np.eye(8) - gain @ _H
    cov = ikh @ state.covariance @ ikh.T + gain @ noise.measurement_cov(state.mean) @ gain.T
    return KalmanState(mean, 0.5 * (cov + cov.T))


def mahalanobis_sq(state: KalmanState, box: BoundingBox, noise: NoiseModel = NoiseModel()) -> float:
    """Squared Mahalanobis distance of the box measurement; inf if degenerate."""
    z_pred, s_cov = project(state, noise)
    d = box_to_measurement(box) - z_pred
    try:
        chol = np.linalg.cholesky(s_cov)
    except np.linalg.LinAlgError:
        logger.warning("degenerate Kalman state: innovation covariance is singular")
        return float("inf")
    y = np.linalg.solve(chol, d)
    return float(y @ y)


def mahalanobis_sq_many(state: KalmanState, boxes, noise: NoiseModel = NoiseModel()) -> np.ndarray:
    """Squared Mahalanobis distances for several boxes at once."""
    if len(boxes) == 0:
        return np.zeros(0)
    z_pred, s_cov = project(state, noise)
    d = np.stack([box_to_measurement(b) for b in boxes]) - z_pred
    try:
        chol = np.linalg.cholesky(s_cov)
    except np.linalg.LinAlgError:
        logger.warning("degenerate Kalman state: innovation covariance is singular")
        return np.full(len(boxes), np.inf)
    y = np.linalg.solve(chol, d.T)
    return (y * y).sum(axis=0)


def gate(state: KalmanState, box: BoundingBox, threshold: float = CHI2_4DOF_95,
         noise: NoiseModel = NoiseModel()) -> bool:
    return mahalanobis_sq(state, box, noise) <= threshold
