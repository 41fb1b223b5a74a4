"""Finite-difference gradient suite over every primitive and composite loss."""

from __future__ import annotations

import numpy as np

from .. import pmn
from ..config import ModelConfig
from ..losses import ciou_alpha, ciou_loss, stage1_loss
from ..model import init_params, localize
from ..numerics import grad_check, no_grad, ops
from ..uld import uncertainty_loss

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-5

# small pipeline: d=8, two encoder layers
PIPELINE = ModelConfig(template_size=8, search_size=16, patch_size=4, dim=8, depth=2, heads=2,
                       mlp_ratio=2, head_channels=4, cls_hidden=4)


def _away_from_zero(rng, shape, lo=0.1, hi=2.0):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, hi, shape)


def _weighted(fn, w):
    return lambda t: ops.sum(fn(t) * w)


def _primitive_cases(rng):
    """``(name, f, x)`` triples; ``f`` maps a Tensor to a scalar."""
    x = _away_from_zero(rng, (3, 4))
    pos = rng.uniform(0.2, 2.0, (3, 4))
    y = _away_from_zero(rng, (3, 4))
    w = rng.normal(size=(3, 4))
    m = rng.normal(size=(4, 5))
    img = rng.normal(size=(2, 5, 5))
    kern = rng.normal(size=(3, 2, 3, 3))
    mask = np.zeros((3, 4))
    mask[:, 0] = -np.inf
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    w_mm, w_conv, w_convx = rng.normal(size=(3, 5)), rng.normal(size=(3, 5, 5)), rng.normal(size=(3, 3, 3))
    w_gap, w_up = rng.normal(size=(2, 1, 1)), rng.normal(size=(2, 10, 10))
    # keep clip / max / min inputs away from their kinks
    gap = np.where(np.abs(x - y) < 0.1, 0.2, 0.0)
    return [
        ("add", _weighted(lambda t: t + y, w), x),
        ("sub", _weighted(lambda t: y - t, w), x),
        ("mul", _weighted(lambda t: t * y, w), x),
        ("div", _weighted(lambda t: y / t, w), x),
        ("neg", _weighted(lambda t: -t, w), x),
        ("power", _weighted(lambda t: ops.power(t, 3.0), w), x),
        ("exp", _weighted(ops.exp, w), x),
        ("log", _weighted(ops.log, w), pos),
        ("sqrt", _weighted(ops.sqrt, w), pos),
        ("relu", _weighted(ops.relu, w), x),
        ("sigmoid", _weighted(ops.sigmoid, w), x),
        ("softplus", _weighted(ops.softplus, w), x),
        ("arctan", _weighted(ops.arctan, w), x),
        ("absolute", _weighted(ops.absolute, w), x),
        ("maximum", _weighted(lambda t: ops.maximum(t, y), w), x + gap),
        ("minimum", _weighted(lambda t: ops.minimum(t, y), w), x + gap),
        ("clip", _weighted(lambda t: ops.clip(t, -0.05, 0.05), w), x),
        ("sum", lambda t: ops.sum(ops.sum(t, axis=0) * w[0]), x),
        ("mean", lambda t: ops.sum(ops.mean(t, axis=1, keepdims=True) * w[:, :1]), x),
        ("reshape", lambda t: ops.sum(ops.reshape(t, (4, 3)) * w.reshape(4, 3)), x),
        ("transpose", lambda t: ops.sum(ops.transpose(t) * w.T), x),
        ("swapaxes", lambda t: ops.sum(ops.swapaxes(t, 0, 1) * w.T), x),
        ("getitem", lambda t: ops.sum(t[np.array([0, 2, 2]), 1:] * w[:3, :3]), x),
        ("concat", lambda t: ops.sum(ops.concat([t, t * 2.0], axis=1) * np.hstack([w, w])), x),
        ("stack", lambda t: ops.sum(ops.stack([t, t * t], axis=0) * np.stack([w, w])), x),
        ("matmul", lambda t: ops.sum(ops.matmul(t, m) * w_mm), x),
        ("masked_softmax", _weighted(lambda t: ops.masked_softmax(t, axis=-1, mask=mask), w), x),
        ("softmax", _weighted(lambda t: ops.softmax(t, axis=0), w), x),
        ("layer_norm", _weighted(lambda t: ops.layer_norm(t, gamma, beta), w), x),
        ("conv2d", lambda t: ops.sum(ops.conv2d(img, ops.reshape(t, (3, 2, 3, 3)), pad=1)
                                     * w_conv), kern.reshape(-1)),
        ("conv2d_input", lambda t: ops.sum(ops.conv2d(t, kern, stride=2, pad=1)
                                           * w_convx), img),
        ("global_avg_pool", lambda t: ops.sum(ops.global_avg_pool(t) * w_gap), img),
        ("bilinear_upsample", lambda t: ops.sum(ops.bilinear_upsample(t, 2) * w_up), img),
    ]


def _boxes(rng, n):
    xy = rng.uniform(0, 20, (n, 2))
    wh = rng.uniform(4, 12, (n, 2))
    return np.hstack([xy, xy + wh])


def _composite_cases(rng):
    cfg = PIPELINE
    params = init_params(cfg, int(rng.integers(1 << 30)))
    # move off the initialisation, where zero biases put ReLUs exactly on their kinks
    for n in params:
        params[n] = params[n].data + rng.normal(0.0, 0.1, params[n].shape)
    mu, gt = _boxes(rng, 3), _boxes(rng, 3)
    sigma = rng.uniform(0.5, 3.0, (3, 4))
    p = rng.uniform(0.05, 0.95, 5)
    y = (rng.random(5) < 0.5).astype(float)
    template = rng.random((1, 3, cfg.template_size, cfg.template_size))
    search = rng.random((1, 3, cfg.search_size, cfg.search_size))
    target = _boxes(rng, 1) * 0.5 + 2.0
    names = list(params)
    # softmax shift invariance makes these gradients identically zero
    candidates = [n for n in names if not n.endswith((".k.b", "prob2.b"))]
    name = candidates[int(rng.integers(len(candidates)))]

    with no_grad():
        base_mu = localize(template, search, cfg, params)[2].mu
    # alpha_v is a constant of the differentiation; freeze it at the base point
    alpha_pipe = ciou_alpha(base_mu, target)

    def pipeline_param(t):
        store = {**{n: params[n] for n in names}, name: t.reshape(params[name].shape)}
        return stage1_loss(localize(template, search, cfg, store)[2], target, alpha_v=alpha_pipe)

    flat = params[name].data.reshape(-1)
    coords = rng.choice(flat.size, size=min(4, flat.size), replace=False)
    return [
        ("uncertainty_loss", lambda t: uncertainty_loss(mu, t, gt), sigma),
        ("uncertainty_loss_mu", lambda t: uncertainty_loss(t, sigma, gt), mu),
        ("ciou_loss", lambda t: ciou_loss(t, gt, ciou_alpha(mu, gt)), mu),
        ("prototype_loss", lambda t: pmn.prototype_loss(t, y), p),
        ("stage1_loss", lambda t: stage1_loss(localize(template, t, cfg, params)[2], target, alpha_v=alpha_pipe),
         search,
         rng.choice(search.size, size=6, replace=False)),
        ("pipeline_params", pipeline_param, flat, coords),
    ]


def gradient_suite(points=50, seed=0, primitives=True, composites=True):
    """``[(name, worst relative error over all points, tolerance)]``."""
    worst = {}
    tol = {}
    for i in range(points):
        rng = np.random.default_rng([seed, i])
        cases = []
        if primitives:
            cases += [(c, PRIMITIVE_TOL) for c in _primitive_cases(rng)]
        if composites:
            cases += [(c, COMPOSITE_TOL) for c in _composite_cases(rng)]
        for case, t in cases:
            name, f, x = case[:3]
            coords = case[3] if len(case) > 3 else None
            err = grad_check(f, x, coords=coords).max_rel_error
            worst[name] = max(worst.get(name, 0.0), err)
            tol[name] = t
    return [(name, worst[name], tol[name]) for name in worst]
