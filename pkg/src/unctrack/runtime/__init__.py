"""Online tracking: Kalman smoothing, search cropping and reliability gating."""

from .geometry import CropMapping, crop_resample
from .kalman import KalmanState, kalman_init, kalman_predict, kalman_step, kalman_update
from .tracker import FrameReport, TrackerState, crop_search, crop_template, init, step, track_sequence

__all__ = [
    "CropMapping", "crop_resample", "KalmanState", "kalman_init", "kalman_predict", "kalman_step",
    "kalman_update", "FrameReport", "TrackerState", "crop_search", "crop_template", "init", "step",
    "track_sequence",
]
