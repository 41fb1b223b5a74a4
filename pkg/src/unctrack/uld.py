"""Uncertainty-aware corner localisation.

The decoder upsamples the search features, then splits into a corner
probability branch (two spatial softmax maps) and an uncertainty branch
(four positive maps, one per box coordinate). Corners are read out by
soft-argmax and each coordinate's sigma by bilinear sampling its map at the
predicted corner.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .exceptions import ContractError, DomainError
from .numerics import ops
from .numerics.autodiff import Tensor, as_tensor

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BoundingBox:
    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise DomainError(f"non-finite box {vals}")
        if self.x_tl > self.x_br or self.y_tl > self.y_br:
            raise DomainError(f"box corners out of order: {vals}")

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(v) for v in np.asarray(arr, dtype=np.float64).reshape(4)))

    @classmethod
    def from_cxcywh(cls, cx, cy, w, h):
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def as_array(self):
        return np.array([self.x_tl, self.y_tl, self.x_br, self.y_br], dtype=np.float64)

    @property
    def width(self):
        return self.x_br - self.x_tl

    @property
    def height(self):
        return self.y_br - self.y_tl

    @property
    def center(self):
        return (0.5 * (self.x_tl + self.x_br), 0.5 * (self.y_tl + self.y_br))


@dataclass
class CornerPrediction:
    """Corners (``mu``), per-coordinate sigma and the raw heatmaps.

    ``mu`` and ``sigma`` are ``... x 4`` tensors in search-image pixels,
    ordered ``x_tl, y_tl, x_br, y_br``.
    """

    mu: Tensor
    sigma: Tensor
    prob_map: Tensor
    unc_map: Tensor
    search_size: float

    @property
    def box(self):
        return BoundingBox.from_array(self.mu.data)

    def unc_normalized(self):
        """Map the uncertainty heatmap into (0, 1) as ``s / (1 + s)``."""
        return self.unc_map / (self.unc_map + 1.0)


def init_uld(init, cfg: ModelConfig):
    c, d = cfg.head_channels, cfg.dim
    init.conv("uld.neck", d, c, 3)
    init.affine("uld.neck.aff", c)
    for branch, out in (("prob", 2), ("unc", 4)):
        init.conv(f"uld.{branch}1", c, c, 3)
        init.affine(f"uld.{branch}1.aff", c)
        init.conv(f"uld.{branch}2", c, out, 1)
    init.dense("uld.unc_ctx", c, 4, bias=False)


def conv_affine_relu(x, params, name, pad=1):
    y = ops.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], pad=pad)
    scale = ops.reshape(params[f"{name}.aff.scale"], (-1, 1, 1))
    shift = ops.reshape(params[f"{name}.aff.shift"], (-1, 1, 1))
    return ops.relu(y * scale + shift)


def spatial_softmax(logits):
    *lead, h, w = logits.shape
    flat = ops.reshape(logits, (*lead, h * w))
    return ops.reshape(ops.masked_softmax(flat, axis=-1), (*lead, h, w))


def decode_heads(f_s, cfg: ModelConfig, params):
    """``F_s -> (prob_map ... x 2 x H x W, unc_map ... x 4 x H x W)``."""
    neck = conv_affine_relu(ops.bilinear_upsample(f_s, cfg.upsample), params, "uld.neck")
    prob = conv_affine_relu(neck, params, "uld.prob1")
    prob = ops.conv2d(prob, params["uld.prob2.w"], params["uld.prob2.b"])
    unc = conv_affine_relu(neck, params, "uld.unc1")
    # crop-level context, so clutter anywhere in the crop can raise every corner's sigma
    ctx = ops.global_avg_pool(unc)
    ctx = ops.matmul(ops.swapaxes(ctx[..., 0], -1, -2), params["uld.unc_ctx.w"])
    unc = ops.conv2d(unc, params["uld.unc2.w"], params["uld.unc2.b"]) + ops.swapaxes(ctx, -1, -2)[..., None]
    return spatial_softmax(prob), ops.softplus(unc) + SIGMA_FLOOR


def soft_argmax(channel, stride=None, check=True):
    """Expected ``(x, y)`` under a normalised ``... x H x W`` map.

    Returns grid units when ``stride`` is None; otherwise pixel coordinates
    of cell centres, ``(g + 0.5) * stride``.
    """
    channel = as_tensor(channel)
    if check:
        data = channel.data
        if np.any(data < 0) or np.any(np.abs(data.sum(axis=(-2, -1)) - 1.0) > 1e-9):
            raise ContractError("soft_argmax needs a nonnegative map summing to 1")
    h, w = channel.shape[-2:]
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    x = ops.sum(ops.sum(channel, axis=-2) * xs, axis=-1)
    y = ops.sum(ops.sum(channel, axis=-1) * ys, axis=-1)
    xy = ops.stack([x, y], axis=-1)
    if stride is not None:
        xy = (xy + 0.5) * float(stride)
    return xy


def _bilinear_sample(maps, gx, gy):
    """Sample ``maps`` (... x H x W) at grid coords ``gx, gy`` (shape ``...``)."""
    h, w = maps.shape[-2:]
    gx = ops.clip(gx, 0.0, w - 1.0) if w > 1 else gx * 0.0
    gy = ops.clip(gy, 0.0, h - 1.0) if h > 1 else gy * 0.0
    x0 = np.clip(np.floor(gx.data).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(gy.data).astype(int), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    lead = np.indices(maps.shape[:-2])
    lead = tuple(lead) if lead.size else ()

    def at(yi, xi):
        return ops.getitem(maps, (*lead, yi, xi))

    top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx
    bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx
    return top * (1.0 - fy) + bottom * fy


def read_sigma(unc_map, corners, warn=True):
    """Per-coordinate sigma at the corners.

    ``unc_map`` is ``... x 4 x H x W``; ``corners`` is ``... x 2 x 2`` in grid
    units (``[[x_tl, y_tl], [x_br, y_br]]``). Channels 0-1 are sampled at the
    top-left corner, 2-3 at the bottom-right. Returns ``... x 4``.
    """
    unc_map, corners = as_tensor(unc_map), as_tensor(corners)
    h, w = unc_map.shape[-2:]
    c = corners.data
    outside = (c[..., 0] < 0) | (c[..., 0] > w - 1) | (c[..., 1] < 0) | (c[..., 1] > h - 1)
    if warn and np.any(outside):
        log.warning("corner outside the %dx%d uncertainty grid; clamped to the border", h, w)
    # corner index for channel c is c // 2
    gx = ops.stack([corners[..., 0, 0], corners[..., 0, 0], corners[..., 1, 0], corners[..., 1, 0]], axis=-1)
    gy = ops.stack([corners[..., 0, 1], corners[..., 0, 1], corners[..., 1, 1], corners[..., 1, 1]], axis=-1)
    return _bilinear_sample(unc_map, gx, gy)


def predict_corners(prob_map, unc_map, cfg: ModelConfig):
    """Assemble a :class:`CornerPrediction` from decoder heatmaps."""
    cell = cfg.cell
    xy = soft_argmax(prob_map, check=False)  # ... x 2 x 2, grid units
    sigma = read_sigma(unc_map, xy, warn=False) * cell
    mu = ops.reshape((xy + 0.5) * cell, (*xy.shape[:-2], 4))
    return CornerPrediction(mu, sigma, prob_map, unc_map, float(cfg.search_size))


def _check_sigma(sigma):
    if np.any(as_tensor(sigma).data <= 0):
        raise DomainError("sigma must be strictly positive")


def uncertainty_loss(mu, sigma, mu_gt):
    """Mean over coordinates of ``(mu - mu_gt)^2 / (2 sigma^2) + log(sigma^2) / 2``."""
    _check_sigma(sigma)
    diff = as_tensor(mu) - as_tensor(mu_gt)
    sigma = as_tensor(sigma)
    terms = diff * diff / (sigma * sigma * 2.0) + ops.log(sigma)
    return ops.mean(terms)


def uncertainty_loss_full(mu, sigma, mu_gt):
    """Gaussian KL form with the data-entropy term dropped; adds log(2 pi) / 2."""
    return uncertainty_loss(mu, sigma, mu_gt) + HALF_LOG_2PI
