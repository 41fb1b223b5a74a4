"""Uncertainty-gated single-object tracking.

Encoder and corner decoder with a per-coordinate uncertainty head, a
prototype memory network that scores each localisation, and an online
tracker that only trusts confident frames. Built on a small numpy
reverse-mode autodiff engine.
"""

from .config import RunConfig, preset
from .estimator import UncTrack
from .model import UncTrackModel, init_params, localize

__all__ = ["RunConfig", "preset", "UncTrack", "UncTrackModel", "init_params", "localize"]
__version__ = "0.1.0"
