"""Prototype memory network: reliability scoring against a FIFO prototype bank."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import ModelConfig
from .exceptions import ContractError, DegenerateMaskError, DimensionError, EmptyBankError
from .numerics import ops
from .numerics.autodiff import Tensor, as_tensor

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Prototype:
    vector: np.ndarray
    source_frame: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64).reshape(-1)
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)
        if not np.all(np.isfinite(vec)):
            raise ContractError("prototype vector must be finite")


@dataclass(frozen=True)
class PrototypeBank:
    """Oldest-first prototypes, at most ``capacity`` of them."""

    capacity: int = 6
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractError("bank capacity must be positive")
        if len(self.entries) > self.capacity:
            raise ContractError("bank holds more entries than its capacity")

    def __len__(self):
        return len(self.entries)

    def vectors(self):
        if not self.entries:
            return np.zeros((0, 0))
        return np.stack([p.vector for p in self.entries])


def init_pmn(init, cfg: ModelConfig):
    c = cfg.dim
    init.conv("pmn.cim", 4, 1, 3)
    init.conv("pmn.fuse", c + 1, c, 1)
    for proj in ("q", "k", "v"):
        init.dense(f"pmn.{proj}", c, c)
    init.dense("pmn.fc1", c, cfg.cls_hidden)
    init.dense("pmn.fc2", cfg.cls_hidden, 2)


def extract_prototype(f_t, source_frame=0, confidence=1.0):
    """Global-average-pool a template feature map into a :class:`Prototype`."""
    pooled = ops.global_avg_pool(f_t).data.reshape(-1)
    return Prototype(pooled, source_frame, confidence)


def pool_prototype(f_t):
    """Differentiable ``... x C x H x W -> ... x C`` pooling."""
    pooled = ops.global_avg_pool(f_t)
    return ops.reshape(pooled, pooled.shape[:-2])


def confidence_inversion(unc_norm, params, check=True):
    """``sigmoid(conv(1 - unc_norm))``: ``... x 4 x H x W -> ... x 1 x H x W``."""
    unc_norm = as_tensor(unc_norm)
    if check and (np.any(unc_norm.data < 0) or np.any(unc_norm.data > 1)):
        raise ContractError("normalized uncertainty must lie in [0, 1]")
    kernel = params["pmn.cim.w"]
    pad = kernel.shape[-1] // 2
    return ops.sigmoid(ops.conv2d(1.0 - unc_norm, kernel, params["pmn.cim.b"], pad=pad))


def fuse_features(f_c, f_s, params):
    """Concatenate ``(F_s, F_c)`` on channels and project back to C with a 1x1 conv."""
    f_c, f_s = as_tensor(f_c), as_tensor(f_s)
    if f_c.shape[-2:] != f_s.shape[-2:]:
        raise DimensionError(f"spatial extents differ: F_c {f_c.shape}, F_s {f_s.shape}")
    return ops.conv2d(ops.concat([f_s, f_c], axis=-3), params["pmn.fuse.w"], params["pmn.fuse.b"])


def box_mask(box, grid, cell):
    """0 on head-grid cells whose centres fall inside ``box`` (pixels), -inf elsewhere.

    Falls back to the cell containing the box centre when no centre is inside.
    """
    x_tl, y_tl, x_br, y_br = np.asarray(box, dtype=np.float64)
    centres = (np.arange(grid) + 0.5) * cell
    inside_x = (centres >= x_tl) & (centres <= x_br)
    inside_y = (centres >= y_tl) & (centres <= y_br)
    keep = inside_y[:, None] & inside_x[None, :]
    if not keep.any():
        cx = int(np.clip((x_tl + x_br) / 2 // cell, 0, grid - 1))
        cy = int(np.clip((y_tl + y_br) / 2 // cell, 0, grid - 1))
        keep[cy, cx] = True
    return np.where(keep, 0.0, -np.inf)[None]


def reweight_prototype(p, f, mask):
    """Masked attention pooling of feature columns with the prototype as query.

    ``p`` is ``... x C``, ``f`` is ``... x C x H x W`` and ``mask`` is
    ``... x 1 x H x W`` (or ``H x W``) with entries 0 / -inf.
    Returns the ``... x C`` reweighted prototype.
    """
    p, f = as_tensor(p), as_tensor(f)
    *lead, c, h, w = f.shape
    mask = np.asarray(mask, dtype=np.float64)
    mask = mask.reshape(mask.shape[:-2] + (h * w,))
    if np.any(np.all(np.isneginf(mask), axis=-1)):
        raise DegenerateMaskError("target mask has no in-box pixel")
    cols = ops.reshape(f, (*lead, c, h * w))
    scores = ops.matmul(ops.reshape(p, (*lead, 1, c)), cols)
    weights = ops.masked_softmax(scores, axis=-1, mask=mask)
    pooled = ops.matmul(weights, ops.swapaxes(cols))
    return ops.reshape(pooled, (*lead, c))


def cosine_similarity(query, bank):
    """Cosine similarity of ``query`` (C) with each row of ``bank`` (K x C)."""
    query = np.asarray(query, dtype=np.float64)
    bank = np.atleast_2d(np.asarray(bank, dtype=np.float64))
    qn = np.linalg.norm(query)
    bn = np.linalg.norm(bank, axis=1)
    denom = np.maximum(qn * bn, 1e-300)
    return np.clip(bank @ query / denom, -1.0, 1.0)


def select_top_k(query, bank_vectors, k):
    """Indices (into the bank) of the ``min(k, K)`` most similar entries.

    Ordered by descending similarity; equal similarities prefer the newer
    (later) entry.
    """
    sims = cosine_similarity(query, bank_vectors)
    order = np.lexsort((-np.arange(len(sims)), -sims))
    return order[:min(k, len(sims))], sims


def aggregate(p_star, group, params, value_from_group=False):
    """Cross-attention of ``p_star`` (... x C) over ``group`` (... x k x C).

    The value projection is applied to ``p_star`` itself unless
    ``value_from_group`` is set, in which case it is applied to the group.
    """
    p_star, group = as_tensor(p_star), as_tensor(group)
    lead = p_star.shape[:-1]
    c = p_star.shape[-1]
    q = ops.matmul(ops.reshape(p_star, (*lead, 1, c)), params["pmn.q.w"]) + params["pmn.q.b"]
    k = ops.matmul(group, params["pmn.k.w"]) + params["pmn.k.b"]
    attn = ops.masked_softmax(ops.matmul(q, ops.swapaxes(k)), axis=-1)  # ... x 1 x k
    if value_from_group:
        v = ops.matmul(group, params["pmn.v.w"]) + params["pmn.v.b"]
        mixed = ops.matmul(attn, v)
    else:
        v = ops.matmul(ops.reshape(p_star, (*lead, 1, c)), params["pmn.v.w"]) + params["pmn.v.b"]
        mixed = ops.sum(attn, axis=-1, keepdims=True) * v
    return p_star + ops.reshape(mixed, (*lead, c))


def memory_read(p_star, bank: PrototypeBank, k, params, value_from_group=False):
    """Aggregate ``p_star`` with its top-k most similar bank prototypes."""
    if len(bank) == 0:
        raise EmptyBankError("prototype bank is empty")
    if k < 1:
        raise ContractError("k must be at least 1")
    p_star = as_tensor(p_star)
    idx, _ = select_top_k(p_star.data.reshape(-1), bank.vectors(), k)
    group = bank.vectors()[idx]
    return aggregate(p_star.reshape(-1), group, params, value_from_group)


def confidence_logits(p_hat, params):
    h = ops.relu(ops.matmul(as_tensor(p_hat), params["pmn.fc1.w"]) + params["pmn.fc1.b"])
    return ops.matmul(h, params["pmn.fc2.w"]) + params["pmn.fc2.b"]


def class_probabilities(p_hat, params):
    """``... x 2`` softmax over (unreliable, reliable)."""
    p_hat = as_tensor(p_hat)
    squeeze = p_hat.ndim == 1
    x = ops.reshape(p_hat, (1, -1)) if squeeze else p_hat
    probs = ops.masked_softmax(confidence_logits(x, params), axis=-1)
    return ops.reshape(probs, (2,)) if squeeze else probs


def confidence_score(p_hat, params):
    """Probability that the prototype is reliable (the positive class)."""
    return class_probabilities(p_hat, params)[..., 1]


def prototype_loss(p, y):
    """Binary cross-entropy, mean over the batch, with ``p`` clamped away from 0 and 1."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} and labels {y.shape} differ in shape")
    pc = ops.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -ops.mean(ops.log(pc) * y + ops.log(1.0 - pc) * (1.0 - y))


def memory_update(bank: PrototypeBank, proto: Prototype, p, threshold=0.5):
    """Append ``proto`` when ``p`` strictly exceeds ``threshold``; evict the oldest past capacity."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"confidence {p} outside [0, 1]")
    if not p > threshold:
        return bank
    entries = bank.entries + (proto,)
    if len(entries) > bank.capacity:
        entries = entries[len(entries) - bank.capacity:]
    return replace(bank, entries=entries)


def reliability(f_t, f_s_up, unc_norm, mask, bank_group, params, value_from_group=False):
    """Differentiable PMN head used in training: features -> (p, P*).

    ``f_s_up`` must already be on the head grid; ``bank_group`` is the
    ``... x k x C`` group of retrieved prototypes.
    """
    f_c = confidence_inversion(unc_norm, params, check=False)
    fused = fuse_features(f_c, f_s_up, params)
    p_star = reweight_prototype(pool_prototype(f_t), fused, mask)
    p_hat = aggregate(p_star, bank_group, params, value_from_group)
    return confidence_score(p_hat, params), p_star
