"""Constant-velocity Kalman filter on ``(cx, cy, w, h)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import KalmanConfig
from ..exceptions import NumericalError

NDIM = 4
_MOTION = np.eye(2 * NDIM)
_MOTION[:NDIM, NDIM:] = np.eye(NDIM)
_OBSERVE = np.eye(NDIM, 2 * NDIM)
PSD_TOL = 1e-9


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray  # cx, cy, w, h, vcx, vcy, vw, vh
    covariance: np.ndarray

    @property
    def box(self):
        cx, cy, w, h = self.mean[:NDIM]
        return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def box_to_measurement(box):
    x1, y1, x2, y2 = np.asarray(box, dtype=np.float64)
    return np.array([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1])


def kalman_init(box, cfg: KalmanConfig = KalmanConfig()):
    mean = np.zeros(2 * NDIM)
    mean[:NDIM] = box_to_measurement(box)
    cov = np.diag([cfg.measurement] * NDIM + [cfg.init_vel_var] * NDIM).astype(np.float64)
    return KalmanState(mean, cov)


def _check(cov):
    if not np.all(np.isfinite(cov)):
        raise NumericalError("covariance is not finite", stage="kalman")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > PSD_TOL * scale:
        raise NumericalError("covariance is not symmetric", stage="kalman")
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -PSD_TOL * scale:
        raise NumericalError("covariance is not positive semidefinite", stage="kalman")


def kalman_predict(state: KalmanState, cfg: KalmanConfig = KalmanConfig()):
    _check(state.covariance)
    q = np.diag([cfg.process_pos] * NDIM + [cfg.process_vel] * NDIM)
    mean = _MOTION @ state.mean
    cov = _MOTION @ state.covariance @ _MOTION.T + q
    mean[2:4] = np.maximum(mean[2:4], 0.0)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kalman_update(state: KalmanState, box, cfg: KalmanConfig = KalmanConfig()):
    """Measurement update with an observed box (Joseph form)."""
    _check(state.covariance)
    r = np.eye(NDIM) * cfg.measurement
    z = box_to_measurement(box)
    p = state.covariance
    s = _OBSERVE @ p @ _OBSERVE.T + r
    gain = np.linalg.solve(s, _OBSERVE @ p).T
    mean = state.mean + gain @ (z - _OBSERVE @ state.mean)
    i_kh = np.eye(2 * NDIM) - gain @ _OBSERVE
    cov = i_kh @ p @ i_kh.T + gain @ r @ gain.T
    mean[2:4] = np.maximum(mean[2:4], 0.0)
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kalman_step(state: KalmanState, observation=None, cfg: KalmanConfig = KalmanConfig()):
    """Predict one frame ahead, then correct with ``observation`` if given."""
    predicted = kalman_predict(state, cfg)
    if observation is None:
        return predicted
    return kalman_update(predicted, observation, cfg)
