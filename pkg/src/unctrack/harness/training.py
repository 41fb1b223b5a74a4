"""Two-stage training on synthetic sequences.

Stage 1 fits encoder and decoder on template/search crops with the weighted
box + uncertainty objective. Occluded frames carry corrupted corner labels,
so the uncertainty branch learns to flag them. Stage 2 freezes both and fits
the prototype memory network on same-video (positive) and cross-video
(negative) pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import pmn
from ..config import RunConfig
from ..exceptions import NumericalError
from ..losses import LossWeights, stage1_loss, stage1_terms
from ..model import FROZEN_PREFIXES, PMN_PREFIXES, init_params, localize
from ..numerics import ops
from ..numerics.autodiff import Tape, backward, no_grad
from ..numerics.params import ParamStore
from ..runtime.geometry import crop_resample
from ..runtime.tracker import crop_template
from .optim import cosine_lr, make_optimizer

log = logging.getLogger(__name__)


class TrainingDiverged(NumericalError):
    """Loss became non-finite; ``params`` holds the last good checkpoint."""

    def __init__(self, step, params):
        super().__init__(f"loss is not finite at step {step}", stage="train")
        self.step = step
        self.params = params


@dataclass
class TrainResult:
    params: ParamStore
    losses: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


# -- stage 1 ----------------------------------------------------------------

def _usable(seq, t):
    return seq.events[t] != "out_of_view"


def sample_crop_pair(seq, rng, cfg: RunConfig, corrupt=True, occluded=False):
    """One (template, search, target box in search pixels, event tag) sample.

    The template comes from a clean frame with a jittered box; the search
    region is centred near the target with a random shift and scale. With
    ``occluded`` the search frame is drawn from the occlusion windows.
    """
    m, tc = cfg.model, cfg.tracker
    clean = [t for t, e in enumerate(seq.events) if e == "clean"]
    i = int(rng.choice(clean))
    if occluded:
        usable = [t for t, e in enumerate(seq.events) if e == "occluded"]
    else:
        usable = [t for t in range(len(seq)) if _usable(seq, t)]
    j = int(rng.choice(usable))

    tb = seq.gt[i]
    w, h = tb[2] - tb[0], tb[3] - tb[1]
    jit = rng.uniform(-0.05, 0.05, 4) * np.array([w, h, w, h])
    template = crop_template(seq.frames[i], tb + jit, cfg)

    gb = seq.gt[j]
    w, h = gb[2] - gb[0], gb[3] - gb[1]
    size = max(w, h, tc.min_size)
    scale = 2.0 if rng.random() < 0.25 else 1.0
    side = tc.base_context * size * scale * np.exp(rng.uniform(-0.15, 0.15))
    shift = rng.uniform(-0.25, 0.25, 2) * side / scale
    cx, cy = (gb[0] + gb[2]) / 2 + shift[0], (gb[1] + gb[3]) / 2 + shift[1]
    search, mapping = crop_resample(seq.frames[j], cx, cy, side, m.search_size)
    target = mapping.to_patch(gb)
    tag = seq.events[j]
    if corrupt and tag == "occluded":
        target = corrupt_box(target, rng, cfg.data.label_noise * m.search_size)
    return template, search, target, tag


def corrupt_box(box, rng, std):
    noisy = box + rng.normal(0.0, std, 4)
    x1, x2 = sorted((noisy[0], noisy[2]))
    y1, y2 = sorted((noisy[1], noisy[3]))
    return np.array([x1, y1, max(x2, x1 + 1.0), max(y2, y1 + 1.0)])


def sample_batch(corpus, rng, cfg, batch, corrupt=True):
    """Stack ``batch`` samples; a ``data.occluded_fraction`` share come from occlusions."""
    with_occ = [k for k, seq in enumerate(corpus) if "occluded" in seq.events]
    items = []
    for _ in range(batch):
        occ = bool(with_occ) and rng.random() < cfg.data.occluded_fraction
        pool = with_occ if occ else range(len(corpus))
        seq = corpus[int(rng.choice(pool))]
        items.append(sample_crop_pair(seq, rng, cfg, corrupt, occluded=occ))
    t, s, g, tags = zip(*items)
    return np.stack(t), np.stack(s), np.stack(g), list(tags)


def stage1_objective(params, cfg: RunConfig, template, search, gt):
    _, _, pred = localize(template, search, cfg.model, params)
    w = LossWeights(cfg.loss.alpha, cfg.loss.beta, cfg.loss.gamma)
    return stage1_loss(pred, gt, w)


def train_stage1(cfg: RunConfig, corpus, params=None, probe=None, callback=None):
    """Fit encoder and decoder; returns a :class:`TrainResult`."""
    tcfg = cfg.train1
    params = init_params(cfg.model, cfg.seed) if params is None else params.copy()
    rng = np.random.default_rng(tcfg.seed)
    names = params.subset(FROZEN_PREFIXES)
    opt = make_optimizer(params, names, tcfg)
    result = TrainResult(params)
    last_good = params.copy()
    for step in range(tcfg.steps):
        template, search, gt, _ = sample_batch(corpus, rng, cfg, tcfg.batch)
        with Tape() as tape:
            loss = stage1_objective(params, cfg, template, search, gt)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, last_good)
        grads = backward(tape, loss)
        opt.step(grads, cosine_lr(tcfg.lr, step, tcfg.steps))
        result.losses.append(value)
        if step % 50 == 0:
            last_good = params.copy()
            log.info("stage1 step %d loss %.4f", step, value)
        if callback is not None:
            callback(step, value, params)
    if probe is not None:
        result.metrics["probe_loss"] = probe_loss(params, cfg, probe)
    return result


def probe_loss(params, cfg, probe):
    template, search, gt = probe
    with no_grad():
        return stage1_objective(params, cfg, template, search, gt).item()


def sigma_by_tag(params, cfg: RunConfig, corpus, every=1):
    """Mean predicted sigma (search pixels) per event tag on gt-centred crops.

    The template is the first frame's crop; the search region is centred on
    the ground truth at unit scale.
    """
    m, tc = cfg.model, cfg.tracker
    sums, counts = {}, {}
    for seq in corpus:
        template = crop_template(seq.frames[0], seq.gt[0], cfg)
        idx = [t for t in range(1, len(seq), every) if _usable(seq, t)]
        searches = []
        for t in idx:
            gb = seq.gt[t]
            size = max(gb[2] - gb[0], gb[3] - gb[1], tc.min_size)
            patch, _ = crop_resample(seq.frames[t], (gb[0] + gb[2]) / 2, (gb[1] + gb[3]) / 2,
                                     tc.base_context * size, m.search_size)
            searches.append(patch)
        with no_grad():
            _, _, pred = localize(np.repeat(template[None], len(idx), 0), np.stack(searches), m, params)
        sig = pred.sigma.data.mean(axis=-1)
        for t, s in zip(idx, sig):
            tag = seq.events[t]
            sums[tag] = sums.get(tag, 0.0) + float(s)
            counts[tag] = counts.get(tag, 0) + 1
    return {tag: sums[tag] / counts[tag] for tag in sorted(sums)}


# -- stage 2 ----------------------------------------------------------------

@dataclass
class FeatureCache:
    """Frozen encoder/decoder outputs for template/search pairs.

    Row ``r`` pairs the template of video ``owner[r]`` with a search crop
    from video ``source[r]``.
    """

    f_t: np.ndarray
    f_s_up: np.ndarray
    unc_norm: np.ndarray
    mask: np.ndarray
    owner: np.ndarray
    source: np.ndarray

    def positives(self, video):
        return np.nonzero((self.owner == video) & (self.source == video))[0]

    def negatives(self, video):
        return np.nonzero((self.owner == video) & (self.source != video))[0]


def _search_at_gt(seq, t, rng, cfg, jitter=0.2, wide_prob=0.4):
    """Search crop around frame ``t``'s target with tracking-like offsets.

    The region is doubled with probability ``wide_prob``, as after a rejected
    frame, and shifted by up to ``jitter`` of the unit-scale side.
    """
    m, tc = cfg.model, cfg.tracker
    gb = seq.gt[t]
    size = max(gb[2] - gb[0], gb[3] - gb[1], tc.min_size)
    base = tc.base_context * size
    side = base * (2.0 if rng.random() < wide_prob else 1.0)
    shift = rng.uniform(-jitter, jitter, 2) * base
    patch, mapping = crop_resample(seq.frames[t], (gb[0] + gb[2]) / 2 + shift[0],
                                   (gb[1] + gb[3]) / 2 + shift[1], side, m.search_size)
    return patch, mapping.to_patch(gb)


def build_feature_cache(params, cfg: RunConfig, corpus, rng, per_video=32, negatives_per_video=32,
                        chunk=32):
    """Encode positive and cross-video pairs once with the frozen network."""
    m = cfg.model
    rows = []  # (owner, source, template, search, box)
    for v, seq in enumerate(corpus):
        clean = [t for t, e in enumerate(seq.events) if e == "clean" and t > 0]

        def template():
            # the online template is refreshed from predictions, so draw it from any clean frame
            t = int(rng.choice([0] + clean))
            gb = seq.gt[t]
            jit = rng.uniform(-0.05, 0.05, 4) * (gb[2] - gb[0] + gb[3] - gb[1]) / 2
            return crop_template(seq.frames[t], gb + jit, cfg)

        for t in rng.choice(clean, size=min(per_video, len(clean)), replace=False):
            patch, box = _search_at_gt(seq, int(t), rng, cfg)
            rows.append((v, v, template(), patch, box))
        others = [u for u in range(len(corpus)) if u != v]
        for _ in range(negatives_per_video):
            u = int(rng.choice(others))
            cand = [t for t, e in enumerate(corpus[u].events) if e != "out_of_view"]
            patch, box = _search_at_gt(corpus[u], int(rng.choice(cand)), rng, cfg)
            rows.append((v, u, template(), patch, box))

    f_t, f_s_up, unc, masks = [], [], [], []
    for a in range(0, len(rows), chunk):
        part = rows[a:a + chunk]
        with no_grad():
            ft, fs, pred = localize(np.stack([r[2] for r in part]), np.stack([r[3] for r in part]), m, params)
            up = ops.bilinear_upsample(fs, m.upsample)
        f_t.append(ft.data)
        f_s_up.append(up.data)
        unc.append(pred.unc_map.data / (1.0 + pred.unc_map.data))
        masks.extend(pmn.box_mask(r[4], m.head_grid, m.cell) for r in part)
    return FeatureCache(np.concatenate(f_t), np.concatenate(f_s_up), np.concatenate(unc),
                        np.stack(masks), np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))


def sample_pair_labels(rng, n):
    """Balanced binary labels: 1 = same video (positive), 0 = different video."""
    return (rng.random(n) < 0.5).astype(np.float64)


def _pmn_rows(params, cfg, cache, rows):
    f_c = pmn.confidence_inversion(cache.unc_norm[rows], params, check=False)
    fused = pmn.fuse_features(f_c, cache.f_s_up[rows], params)
    return pmn.reweight_prototype(pmn.pool_prototype(cache.f_t[rows]), fused, cache.mask[rows])


def stage2_batch(cache: FeatureCache, rng, n_videos, batch, bank_size):
    """Draw query rows, bank rows and labels for one stage-2 step."""
    labels = sample_pair_labels(rng, batch)
    queries, banks = [], []
    for y in labels:
        while True:
            v = int(rng.integers(n_videos))
            pos = cache.positives(v)
            if len(pos) > bank_size:
                break
        perm = rng.permutation(pos)
        banks.append(perm[:bank_size])
        queries.append(perm[bank_size] if y == 1 else int(rng.choice(cache.negatives(v))))
    return np.array(queries), np.stack(banks), labels


def stage2_forward(params, cfg: RunConfig, cache, queries, banks):
    """Confidence for each query against its own bank (top-k selected on values)."""
    m = cfg.model
    b, kb = banks.shape
    all_rows = np.concatenate([queries, banks.reshape(-1)])
    protos = _pmn_rows(params, cfg, cache, all_rows)
    p_star = protos[:b]
    bank_vecs = ops.reshape(protos[b:], (b, kb, -1))
    k = min(m.top_k, kb)
    picks = np.stack([pmn.select_top_k(p_star.data[i], bank_vecs.data[i], k)[0] for i in range(b)])
    group = ops.getitem(bank_vecs, (np.arange(b)[:, None], picks))
    p_hat = pmn.aggregate(p_star, group, params, m.value_from_group)
    return pmn.confidence_score(p_hat, params)


def train_stage2(cfg: RunConfig, params, corpus, callback=None, cache=None):
    """Fit the PMN with the encoder and decoder frozen."""
    tcfg = cfg.train2
    params = params.copy()
    rng = np.random.default_rng(tcfg.seed)
    if cache is None:
        cache = build_feature_cache(params, cfg, corpus, rng)
    bank_size = min(cfg.tracker.capacity, max(len(cache.positives(v)) for v in range(len(corpus))) - 1)
    names = params.subset(PMN_PREFIXES)
    opt = make_optimizer(params, names, tcfg)
    result = TrainResult(params)
    last_good = params.copy()
    for step in range(tcfg.steps):
        queries, banks, labels = stage2_batch(cache, rng, len(corpus), tcfg.batch, bank_size)
        with Tape() as tape:
            loss = pmn.prototype_loss(stage2_forward(params, cfg, cache, queries, banks), labels)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, last_good)
        opt.step(backward(tape, loss), cosine_lr(tcfg.lr, step, tcfg.steps, warmup=20))
        result.losses.append(value)
        if step % 50 == 0:
            last_good = params.copy()
            log.info("stage2 step %d loss %.4f", step, value)
        if callback is not None:
            callback(step, value, params)
    return result


def pair_accuracy(params, cfg: RunConfig, corpus, seed=123, trials=400):
    """Held-out accuracy of the reliability classifier on balanced pairs."""
    rng = np.random.default_rng(seed)
    cache = build_feature_cache(params, cfg, corpus, rng)
    bank_size = min(cfg.tracker.capacity, max(len(cache.positives(v)) for v in range(len(corpus))) - 1)
    queries, banks, labels = stage2_batch(cache, rng, len(corpus), trials, bank_size)
    with no_grad():
        p = stage2_forward(params, cfg, cache, queries, banks).data
    return float(np.mean((p > cfg.tracker.threshold) == (labels == 1)))


def frozen_names():
    return FROZEN_PREFIXES


def stage1_breakdown(params, cfg, template, search, gt):
    with no_grad():
        _, _, pred = localize(template, search, cfg.model, params)
        return [t.item() for t in stage1_terms(pred, gt)]
