"""Differentiable primitives on :class:`Tensor`.

All functions accept tensors or array-likes and return tensors. Spatial
operations take channel-first input with an optional leading batch axis,
i.e. ``C x H x W`` or ``B x C x H x W``.
"""

from __future__ import annotations

import builtins

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigurationError, DegenerateMaskError, DimensionError
from .autodiff import Tensor, apply, as_tensor

MASK_SENTINEL = np.finfo(np.float64).min


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------

def _add_vjp(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def add(a, b):
    return apply("add", np.add, _add_vjp, (a, b))


def _sub_vjp(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def sub(a, b):
    return apply("sub", np.subtract, _sub_vjp, (a, b))


def _mul_vjp(g, out, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def mul(a, b):
    return apply("mul", np.multiply, _mul_vjp, (a, b))


def _div_vjp(g, out, a, b):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def div(a, b):
    return apply("div", np.divide, _div_vjp, (a, b))


def neg(a):
    return apply("neg", np.negative, lambda g, out, a: (-g,), (a,))


def _pow_fwd(a, exponent):
    return np.power(a, exponent)


def _pow_vjp(g, out, a, exponent):
    return (g * exponent * np.power(a, exponent - 1),)


def power(a, exponent):
    return apply("power", _pow_fwd, _pow_vjp, (a,), exponent=float(exponent))


def exp(a):
    return apply("exp", np.exp, lambda g, out, a: (g * out,), (a,))


def log(a):
    return apply("log", np.log, lambda g, out, a: (g / a,), (a,))


def sqrt(a):
    return apply("sqrt", np.sqrt, lambda g, out, a: (g * 0.5 / out,), (a,))


def relu(a):
    return apply("relu", lambda a: np.maximum(a, 0.0), lambda g, out, a: (g * (a > 0),), (a,))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(a):
    return apply("sigmoid", _sigmoid, lambda g, out, a: (g * out * (1.0 - out),), (a,))


def softplus(a):
    return apply("softplus", lambda a: np.logaddexp(0.0, a),
                 lambda g, out, a: (g * _sigmoid(a),), (a,))


def arctan(a):
    return apply("arctan", np.arctan, lambda g, out, a: (g / (1.0 + a * a),), (a,))


def absolute(a):
    return apply("abs", np.abs, lambda g, out, a: (g * np.sign(a),), (a,))


def _max_vjp(g, out, a, b):
    take_a = a >= b
    return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)


def maximum(a, b):
    """Elementwise maximum; ties route the gradient to ``a``."""
    return apply("maximum", np.maximum, _max_vjp, (a, b))


def _min_vjp(g, out, a, b):
    take_a = a <= b
    return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)


def minimum(a, b):
    """Elementwise minimum; ties route the gradient to ``a``."""
    return apply("minimum", np.minimum, _min_vjp, (a, b))


def _clip_vjp(g, out, a, lo, hi):
    return (g * ((a > lo) & (a < hi)),)


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero on and beyond the bounds."""
    return apply("clip", lambda a, lo, hi: np.clip(a, lo, hi), _clip_vjp, (a,),
                 lo=float(lo), hi=float(hi))


# -- reductions and shape plumbing ----------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _sum_vjp(g, out, a, axis, keepdims):
    if not keepdims:
        for ax in sorted(_norm_axis(axis, a.ndim)):
            g = np.expand_dims(g, ax)
    return (np.broadcast_to(g, a.shape).copy(),)


def sum(a, axis=None, keepdims=False):
    if isinstance(axis, list):
        axis = tuple(axis)
    return apply("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims),
                 _sum_vjp, (a,), axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = 1
    for ax in _norm_axis(axis, a.ndim):
        count *= a.shape[ax]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    return apply("reshape", lambda a, shape: np.reshape(a, shape),
                 lambda g, out, a, shape: (np.reshape(g, a.shape),), (a,), shape=tuple(shape))


def _transpose_vjp(g, out, a, axes):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def transpose(a, axes=None):
    return apply("transpose", lambda a, axes: np.transpose(a, axes), _transpose_vjp, (a,),
                 axes=None if axes is None else tuple(axes))


def swapaxes(a, ax1=-1, ax2=-2):
    axes = list(range(as_tensor(a).ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def _getitem_vjp(g, out, a, index):
    full = np.zeros(a.shape)
    if _is_basic_index(index):
        full[index] += g
    else:
        np.add.at(full, index, g)
    return (full,)


def getitem(a, index):
    return apply("getitem", lambda a, index: a[index], _getitem_vjp, (a,), index=index)


def _concat_vjp(g, out, *arrays, axis):
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def concat(tensors, axis=0):
    return apply("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_vjp,
                 tuple(tensors), axis=axis)


def _stack_vjp(g, out, *arrays, axis):
    return tuple(np.take(g, i, axis=axis) for i in range(len(arrays)))


def stack(tensors, axis=0):
    return apply("stack", lambda *xs, axis: np.stack(xs, axis=axis), _stack_vjp,
                 tuple(tensors), axis=axis)


# -- linear algebra ----------------------------------------------------------

def _matmul_vjp(g, out, a, b):
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return apply("matmul", np.matmul, _matmul_vjp, (a, b))


# -- softmax -------------------------------------------------------------------

def _masked_softmax_fwd(x, axis, mask):
    if mask is not None:
        x = x + np.where(np.isneginf(mask), MASK_SENTINEL, 0.0)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    if mask is not None:
        y = np.where(np.broadcast_to(np.isneginf(mask), y.shape), 0.0, y)
    return y


def _masked_softmax_vjp(g, out, x, axis, mask):
    return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


def masked_softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is ``-inf`` map to exactly 0.

    ``mask`` holds 0 (keep) or ``-inf`` (drop) and must broadcast against
    ``x``. It is not differentiated.
    """
    x = as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        try:
            dropped = np.broadcast_to(np.isneginf(mask), x.shape)
        except ValueError as err:
            raise DimensionError(f"mask {mask.shape} does not broadcast to {x.shape}") from err
        if np.any(np.all(dropped, axis=axis)):
            raise DegenerateMaskError("every position of a softmax slice is masked")
        mask.flags.writeable = False
    return apply("masked_softmax", _masked_softmax_fwd, _masked_softmax_vjp, (x,),
                 axis=axis, mask=mask)


def softmax(x, axis=-1):
    return masked_softmax(x, axis=axis)


# -- normalisation -----------------------------------------------------------

def _ln_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _ln_vjp(g, out, x, gamma, beta, eps):
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) * inv
    dxhat = g * gamma
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise each vector along the last axis, then scale and shift."""
    return apply("layer_norm", _ln_fwd, _ln_vjp, (x, gamma, beta), eps=float(eps))


# -- spatial ------------------------------------------------------------------

def _conv_windows(x, k, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv_fwd(x, w, stride, pad):
    batched = x.ndim == 4
    xb = x if batched else x[None]
    win = _conv_windows(xb, w.shape[-1], stride, pad)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, O
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return out if batched else out[0]


def _conv_vjp(g, out, x, w, stride, pad):
    batched = x.ndim == 4
    xb = x if batched else x[None]
    gb = g if batched else g[None]
    k = w.shape[-1]
    win = _conv_windows(xb, k, stride, pad)
    gw = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, k, k
    B, C, H, W = xb.shape
    Ho, Wo = gb.shape[2], gb.shape[3]
    cols = np.tensordot(gb, w, axes=([1], [0]))  # B, Ho, Wo, C, k, k
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # B, C, k, k, Ho, Wo
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += cols[:, :, i, j]
    gx = gxp[:, :, pad:pad + H, pad:pad + W]
    return (gx if batched else gx[0]), gw


def conv2d(x, kernel, bias=None, stride=1, pad=0):
    """Zero-padded cross-correlation.

    ``x`` is ``C_in x H x W`` (optionally batched), ``kernel`` is
    ``C_out x C_in x k x k`` with odd ``k``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects CxHxW input and OxCxkxk kernel, got {x.shape}, {kernel.shape}")
    k = kernel.shape[-1]
    if kernel.shape[-2] != k or k % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd side, got {kernel.shape}")
    if x.shape[-3] != kernel.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    for extent in x.shape[-2:]:
        span = extent + 2 * pad - k
        if span < 0 or span % stride:
            raise DimensionError(
                f"conv2d output extent not integral for input {x.shape}, k={k}, stride={stride}, pad={pad}")
    out = apply("conv2d", _conv_fwd, _conv_vjp, (x, kernel), stride=int(stride), pad=int(pad))
    if bias is not None:
        out = out + reshape(bias, (-1, 1, 1))
    return out


def _gap_fwd(x):
    return x.mean(axis=(-2, -1), keepdims=True)


def _gap_vjp(g, out, x):
    hw = x.shape[-1] * x.shape[-2]
    return (np.broadcast_to(g / hw, x.shape).copy(),)


def global_avg_pool(x):
    """Per-channel spatial mean: ``C x H x W -> C x 1 x 1``."""
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise DimensionError(f"global_avg_pool expects ...xCxHxW, got {x.shape}")
    return apply("global_avg_pool", _gap_fwd, _gap_vjp, (x,))


def interpolation_matrix(n, factor):
    """Rows map each of ``n * factor`` output samples onto ``n`` inputs.

    Half-pixel (align-corners-false) convention: output index ``o`` samples
    source coordinate ``(o + 0.5) / factor - 0.5`` clamped to ``[0, n - 1]``.
    """
    m = np.zeros((n * factor, n))
    for o in range(n * factor):
        src = min(max((o + 0.5) / factor - 0.5, 0.0), n - 1.0)
        lo = int(np.floor(src))
        hi = builtins.min(lo + 1, n - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    return m


def _upsample_fwd(x, uh, uw):
    return np.matmul(np.matmul(uh, x), uw.T)


def _upsample_vjp(g, out, x, uh, uw):
    return (np.matmul(np.matmul(uh.T, g), uw),)


def bilinear_upsample(x, factor):
    """Bilinear upsampling of the two trailing axes by 2 or 4."""
    if factor not in (2, 4):
        raise ConfigurationError(f"upsample factor must be 2 or 4, got {factor}")
    x = as_tensor(x)
    uh = interpolation_matrix(x.shape[-2], factor)
    uw = interpolation_matrix(x.shape[-1], factor)
    uh.flags.writeable = False
    uw.flags.writeable = False
    return apply("bilinear_upsample", _upsample_fwd, _upsample_vjp, (x,), uh=uh, uw=uw)
