"""Square crops with bilinear resampling and their frame<->patch mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CropMapping:
    """Affine map between patch pixels and frame pixels.

    ``frame = origin + patch * scale`` on continuous coordinates, where a
    pixel ``i`` covers ``[i, i + 1)``.
    """

    x0: float
    y0: float
    scale: float

    def to_frame(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = pts * self.scale
        out[..., 0::2] += self.x0
        out[..., 1::2] += self.y0
        return out

    def to_patch(self, pts):
        pts = np.array(pts, dtype=np.float64)
        pts[..., 0::2] -= self.x0
        pts[..., 1::2] -= self.y0
        return pts / self.scale


def crop_resample(frame, cx, cy, side, out_size):
    """Resample the square of ``side`` pixels centred at ``(cx, cy)``.

    ``frame`` is ``C x H x W``; returns ``(C x out_size x out_size, mapping)``.
    Regions outside the frame read as zero.
    """
    c, h, w = frame.shape
    mapping = CropMapping(cx - side / 2.0, cy - side / 2.0, side / out_size)
    centres = (np.arange(out_size) + 0.5) * mapping.scale
    xs = mapping.x0 + centres - 0.5
    ys = mapping.y0 + centres - 0.5
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0

    def gather(yi, xi):
        valid = ((yi >= 0) & (yi < h))[:, None] & ((xi >= 0) & (xi < w))[None, :]
        vals = frame[:, np.clip(yi, 0, h - 1)][:, :, np.clip(xi, 0, w - 1)]
        return vals * valid

    top = gather(y0, x0) * (1 - fx) + gather(y0, x0 + 1) * fx
    bottom = gather(y0 + 1, x0) * (1 - fx) + gather(y0 + 1, x0 + 1) * fx
    patch = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return patch, mapping
