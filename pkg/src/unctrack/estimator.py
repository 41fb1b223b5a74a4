"""scikit-learn style wrapper: ``fit`` runs both training stages, ``predict`` tracks."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import preset as load_preset
from .exceptions import InputError
from .harness.evaluation import run_track, variant_config
from .harness.training import train_stage1, train_stage2
from .model import UncTrackModel


class UncTrack(BaseEstimator):
    """Uncertainty-gated single-object tracker.

    ``X`` is a list of :class:`~unctrack.harness.synthetic.SyntheticSequence`
    (anything with ``frames``, ``gt`` and ``events``). The ground truth of
    frame 0 initialises each track; later boxes are only used for training
    and scoring.

    Parameters
    ----------
    preset : str
        Base configuration (``desk``, ``full`` or ``tiny``).
    overrides : dict or None
        Dotted config keys applied over the preset, e.g. ``{"train1.steps": 10}``.
    use_uld, use_pmn : bool
        Ablation switches for the uncertainty gate and the memory network.
    """

    def __init__(self, preset="desk", overrides=None, use_uld=True, use_pmn=True):
        self.preset = preset
        self.overrides = overrides
        self.use_uld = use_uld
        self.use_pmn = use_pmn

    def _config(self):
        cfg = load_preset(self.preset)
        for key, value in (self.overrides or {}).items():
            cfg.set(key, value)
        cfg.validate()
        return variant_config(cfg, self.use_uld, self.use_pmn)

    def fit(self, X, y=None):
        corpus = list(X)
        if not corpus:
            raise InputError("cannot fit on an empty corpus")
        cfg = self._config()
        stage1 = train_stage1(cfg, corpus)
        stage2 = train_stage2(cfg, stage1.params, corpus)
        self.config_ = cfg
        self.params_ = stage2.params
        self.stage1_losses_ = np.array(stage1.losses)
        self.stage2_losses_ = np.array(stage2.losses)
        return self

    def track(self, sequence):
        """Per-frame report rows for one sequence."""
        check_is_fitted(self, "params_")
        rows, _ = run_track(self.config_, UncTrackModel(self.config_.model, self.params_), sequence)
        return rows

    def predict(self, X):
        """List of ``n_frames x 4`` box arrays, one per sequence."""
        keys = ("x_tl", "y_tl", "x_br", "y_br")
        return [np.array([[r[k] for k in keys] for r in self.track(seq)]) for seq in X]

    def score(self, X, y=None):
        """Mean IoU against ground truth over all frames of all sequences."""
        ious = [r["iou_gt"] for seq in X for r in self.track(seq)]
        return float(np.mean(ious))
