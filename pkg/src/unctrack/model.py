"""Network assembly: parameter initialisation and the inference-time model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pmn
from .config import ModelConfig
from .encoder import encode, init_encoder
from .exceptions import EmptyBankError
from .numerics import ops
from .numerics.autodiff import no_grad
from .numerics.params import Initializer, ParamStore
from .uld import decode_heads, init_uld, predict_corners

FROZEN_PREFIXES = ("enc.", "uld.")
PMN_PREFIXES = ("pmn.",)


def init_params(cfg: ModelConfig, seed=0) -> ParamStore:
    cfg.validate()
    init = Initializer(seed)
    init_encoder(init, cfg)
    init_uld(init, cfg)
    pmn.init_pmn(init, cfg)
    return init.store


def localize(template, search, cfg: ModelConfig, params):
    """Differentiable forward pass through encoder and decoder.

    Returns ``(F_t, F_s, CornerPrediction)``.
    """
    f_t, f_s = encode(template, search, cfg, params)
    prob_map, unc_map = decode_heads(f_s, cfg, params)
    return f_t, f_s, predict_corners(prob_map, unc_map, cfg)


@dataclass
class Localization:
    """Detached result of one localisation pass (search-image pixels)."""

    box: np.ndarray
    sigma: np.ndarray
    unc_map: np.ndarray
    f_t: np.ndarray
    f_s: np.ndarray


class UncTrackModel:
    """Inference wrapper around a :class:`ParamStore`.

    The tracking runtime only calls :meth:`localize` and :meth:`reliability`,
    so tests can substitute any object with the same two methods.
    """

    def __init__(self, cfg: ModelConfig, params: ParamStore):
        self.cfg = cfg
        self.params = params

    def localize(self, template, search, region=None) -> Localization:
        with no_grad():
            f_t, f_s, pred = localize(template, search, self.cfg, self.params)
        return Localization(pred.mu.data.copy(), pred.sigma.data.copy(), pred.unc_map.data,
                            f_t.data, f_s.data)

    def reliability(self, loc: Localization, box, bank, unc_override=None):
        """Score the localisation against the bank; return ``(p, P*)``.

        ``unc_override`` replaces the uncertainty heatmap (used by ablations
        that switch off the uncertainty branch). An empty bank skips the
        aggregation step.
        """
        cfg = self.cfg
        unc = loc.unc_map if unc_override is None else np.full_like(loc.unc_map, unc_override)
        with no_grad():
            unc_norm = unc / (1.0 + unc)
            f_s_up = ops.bilinear_upsample(loc.f_s, cfg.upsample)
            f_c = pmn.confidence_inversion(unc_norm, self.params)
            fused = pmn.fuse_features(f_c, f_s_up, self.params)
            mask = pmn.box_mask(box, cfg.head_grid, cfg.cell)
            p_star = pmn.reweight_prototype(pmn.pool_prototype(loc.f_t), fused, mask)
            try:
                p_hat = pmn.memory_read(p_star, bank, cfg.top_k, self.params, cfg.value_from_group)
            except EmptyBankError:
                p_hat = p_star
            p = float(pmn.confidence_score(p_hat, self.params).data)
        return p, p_star.data.copy()
