"""Patch embedding and the joint template/search attention backbone.

Both token streams attend over the concatenation of template and search
keys/values, so each layer is self-attention over the joined sequence
followed by a feed-forward sublayer. Normalisation is applied before each
sublayer (pre-norm).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .exceptions import ConfigurationError, DimensionError
from .numerics import ops
from .numerics.autodiff import Tensor, as_tensor

TEMPLATE = "template"
SEARCH = "search"


@dataclass
class TokenSet:
    tokens: Tensor  # ... x N_tok x d
    origin: str
    grid: tuple

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.shape[-2] != rows * cols:
            raise DimensionError(f"{self.tokens.shape[-2]} tokens do not fill a {rows}x{cols} grid")


def init_encoder(init, cfg: ModelConfig):
    d, s = cfg.dim, cfg.patch_size
    init.dense("enc.embed", 3 * s * s, d)
    init.table("enc.pos_t", cfg.template_grid ** 2, d)
    init.table("enc.pos_s", cfg.search_grid ** 2, d)
    for i in range(cfg.depth):
        p = f"enc.layer{i}"
        init.norm(f"{p}.ln1", d)
        for proj in ("q", "k", "v", "o"):
            init.dense(f"{p}.{proj}", d, d)
        init.norm(f"{p}.ln2", d)
        init.dense(f"{p}.fc1", d, d * cfg.mlp_ratio)
        init.dense(f"{p}.fc2", d * cfg.mlp_ratio, d)


def patchify(image, patch):
    """``... x 3 x H x W -> ... x N x 3*S*S`` with row-major patch order."""
    image = as_tensor(image)
    *lead, c, h, w = image.shape
    if h % patch or w % patch:
        raise ConfigurationError(f"patch size {patch} does not divide image {h}x{w}")
    gh, gw = h // patch, w // patch
    n = len(lead)
    x = ops.reshape(image, (*lead, c, gh, patch, gw, patch))
    x = ops.transpose(x, (*range(n), n + 1, n + 3, n, n + 2, n + 4))
    return ops.reshape(x, (*lead, gh * gw, c * patch * patch)), (gh, gw)


def patchify_embed(image, cfg: ModelConfig, params, origin=SEARCH):
    patches, grid = patchify(image, cfg.patch_size)
    pos = params["enc.pos_t" if origin == TEMPLATE else "enc.pos_s"]
    if pos.shape[0] != grid[0] * grid[1]:
        raise ConfigurationError(f"{origin} image gives {grid} patches but positional table has {pos.shape[0]} rows")
    tokens = ops.matmul(patches, params["enc.embed.w"]) + params["enc.embed.b"] + pos
    return TokenSet(tokens, origin, grid)


def _dense(x, params, name):
    return ops.matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def mixed_attention_layer(t: TokenSet, s: TokenSet, params, index=0, heads=1, return_attention=False):
    """One backbone layer over template tokens ``t`` and search tokens ``s``.

    Returns the updated pair, plus the ``... x heads x N x N`` attention
    weights when ``return_attention`` is set (rows are queries, template
    first).
    """
    d = t.tokens.shape[-1]
    if s.tokens.shape[-1] != d:
        raise DimensionError(f"token widths differ: template {t.tokens.shape}, search {s.tokens.shape}")
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    p = f"enc.layer{index}"
    n_t = t.tokens.shape[-2]
    x = ops.concat([t.tokens, s.tokens], axis=-2)
    lead = x.shape[:-2]
    n = x.shape[-2]
    dh = d // heads

    h = ops.layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])

    def split(z):
        z = ops.reshape(z, (*lead, n, heads, dh))
        k = len(lead)
        return ops.transpose(z, (*range(k), k + 1, k, k + 2))

    q, k, v = (split(_dense(h, params, f"{p}.{name}")) for name in ("q", "k", "v"))
    scores = ops.matmul(q, ops.swapaxes(k)) * (1.0 / np.sqrt(dh))
    attn = ops.masked_softmax(scores, axis=-1)
    mixed = ops.matmul(attn, v)
    nl = len(lead)
    mixed = ops.reshape(ops.transpose(mixed, (*range(nl), nl + 1, nl, nl + 2)), (*lead, n, d))
    x = x + _dense(mixed, params, f"{p}.o")

    h2 = ops.layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    x = x + _dense(ops.relu(_dense(h2, params, f"{p}.fc1")), params, f"{p}.fc2")

    t_out = TokenSet(x[..., :n_t, :], t.origin, t.grid)
    s_out = TokenSet(x[..., n_t:, :], s.origin, s.grid)
    if return_attention:
        return t_out, s_out, attn
    return t_out, s_out


def tokens_to_map(ts: TokenSet):
    """``... x N x d -> ... x d x rows x cols``."""
    rows, cols = ts.grid
    *lead, n, d = ts.tokens.shape
    k = len(lead)
    x = ops.transpose(ts.tokens, (*range(k), k + 1, k))
    return ops.reshape(x, (*lead, d, rows, cols))


def encode(template, search, cfg: ModelConfig, params):
    """Return template and search feature maps ``(F_t, F_s)``, channel first."""
    t = patchify_embed(template, cfg, params, TEMPLATE)
    s = patchify_embed(search, cfg, params, SEARCH)
    for i in range(cfg.depth):
        t, s = mixed_attention_layer(t, s, params, index=i, heads=cfg.heads)
    return tokens_to_map(t), tokens_to_map(s)
