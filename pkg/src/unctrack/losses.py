"""Box regression losses and the weighted stage-1 objective.

Boxes are ``... x 4`` tensors ``(x_tl, y_tl, x_br, y_br)``; batched inputs
are averaged over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .numerics import ops
from .numerics.autodiff import Tensor, as_tensor
from .uld import BoundingBox, CornerPrediction, uncertainty_loss

_EPS = 1e-9


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 5.0
    gamma: float = 2.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if not all(np.isfinite(vals)) or min(vals) < 0:
            raise DomainError(f"loss weights must be finite and nonnegative, got {vals}")


def _as_boxes(b):
    if isinstance(b, BoundingBox):
        return Tensor(b.as_array())
    return as_tensor(b)


def ciou_loss(box, gt, alpha_v=None):
    """``1 - IoU + rho^2 / c^2 + alpha_v * v`` averaged over the batch.

    A predicted box with inverted corners is clamped to zero extent. The
    aspect-ratio trade-off ``alpha_v`` is held constant when differentiating;
    passing it explicitly (see :func:`ciou_alpha`) freezes it at that value,
    which makes the loss a smooth function whose exact gradient is the one
    used in training.
    """
    b, g = _as_boxes(box), _as_boxes(gt)
    gw_data = g.data[..., 2] - g.data[..., 0]
    gh_data = g.data[..., 3] - g.data[..., 1]
    if np.any(gw_data <= 0) or np.any(gh_data <= 0):
        raise DomainError("ground-truth box has zero area")

    x1, y1, x2, y2 = (b[..., i] for i in range(4))
    gx1, gy1, gx2, gy2 = (g[..., i] for i in range(4))
    w = ops.relu(x2 - x1)
    h = ops.relu(y2 - y1)
    gw, gh = gx2 - gx1, gy2 - gy1

    iw = ops.relu(ops.minimum(x2, gx2) - ops.maximum(x1, gx1))
    ih = ops.relu(ops.minimum(y2, gy2) - ops.maximum(y1, gy1))
    inter = iw * ih
    union = w * h + gw * gh - inter
    iou = inter / union

    cw = ops.maximum(x2, gx2) - ops.minimum(x1, gx1)
    ch = ops.maximum(y2, gy2) - ops.minimum(y1, gy1)
    diag2 = cw * cw + ch * ch + _EPS
    dx = (x1 + x2) - (gx1 + gx2)
    dy = (y1 + y2) - (gy1 + gy2)
    rho2 = (dx * dx + dy * dy) * 0.25

    delta = ops.arctan(gw / gh) - ops.arctan(w / (h + _EPS))
    v = delta * delta * (4.0 / math.pi ** 2)
    if alpha_v is None:
        with_alpha = v.data / np.maximum((1.0 - iou.data) + v.data, _EPS)
        alpha_v = np.where(v.data > 0, with_alpha, 0.0)
    alpha_v = Tensor(np.broadcast_to(np.asarray(alpha_v, dtype=np.float64), v.shape))
    return ops.mean(1.0 - iou + rho2 / diag2 + alpha_v * v)


def ciou_alpha(box, gt):
    """The aspect-ratio weight ``alpha_v`` at the given boxes (no gradients)."""
    b = np.asarray(_as_boxes(box).data)
    g = np.asarray(_as_boxes(gt).data)
    w = np.maximum(b[..., 2] - b[..., 0], 0.0)
    h = np.maximum(b[..., 3] - b[..., 1], 0.0)
    gw, gh = g[..., 2] - g[..., 0], g[..., 3] - g[..., 1]
    iou = box_iou(b, g)
    v = (np.arctan(gw / gh) - np.arctan(w / (h + _EPS))) ** 2 * (4.0 / math.pi ** 2)
    return np.where(v > 0, v / np.maximum((1.0 - iou) + v, _EPS), 0.0)


def l1_loss(box, gt, scale=1.0):
    """Mean absolute coordinate error after dividing by ``scale``."""
    b, g = _as_boxes(box), _as_boxes(gt)
    return ops.mean(ops.absolute(b - g)) * (1.0 / scale)


def combine(terms, weights: LossWeights):
    """``alpha * ciou + beta * l1 + gamma * uncertainty``."""
    ciou, l1, unc = terms
    return ciou * weights.alpha + l1 * weights.beta + unc * weights.gamma


def stage1_terms(pred: CornerPrediction, gt, alpha_v=None):
    g = _as_boxes(gt)
    return (ciou_loss(pred.mu, g, alpha_v),
            l1_loss(pred.mu, g, scale=pred.search_size),
            uncertainty_loss(pred.mu, pred.sigma, g))


def stage1_loss(pred: CornerPrediction, gt, weights: LossWeights = LossWeights(), alpha_v=None):
    """Weighted sum of CIoU, normalised L1 and the uncertainty loss."""
    return combine(stage1_terms(pred, gt, alpha_v), weights)


def box_iou(a, b):
    """Plain IoU of ``... x 4`` numpy boxes (no gradients)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = np.clip(a[..., 2] - a[..., 0], 0, None) * np.clip(a[..., 3] - a[..., 1], 0, None)
    area_b = np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)
    union = area_a + area_b - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
