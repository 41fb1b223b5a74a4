"""Online tracking loop with reliability gating.

Each frame: crop a search region around the Kalman prediction, localise the
target, score the result against the prototype bank and either accept it
(update filter, bank and template) or reject it (coast on the filter, keep
the last reliable template, double the search region).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..config import RunConfig
from ..exceptions import InputError, NumericalError
from ..pmn import Prototype, PrototypeBank, memory_update
from .geometry import crop_resample
from .kalman import KalmanState, kalman_init, kalman_predict, kalman_update


@dataclass(frozen=True)
class TrackerState:
    template: np.ndarray
    template_frame: int
    bank: PrototypeBank
    kalman: KalmanState
    search_scale: float
    last_confident_frame: int
    frame_index: int
    cfg: RunConfig


@dataclass
class FrameReport:
    frame: int
    box: np.ndarray
    sigma: np.ndarray
    confidence: float
    accepted: bool
    resampled: bool


def _template_side(cfg: RunConfig, w, h):
    m = cfg.model
    size = max(w, h, cfg.tracker.min_size)
    return cfg.tracker.base_context * size * m.template_size / m.search_size


def crop_template(frame, box, cfg: RunConfig):
    x1, y1, x2, y2 = box
    side = _template_side(cfg, x2 - x1, y2 - y1)
    patch, _ = crop_resample(frame, (x1 + x2) / 2, (y1 + y2) / 2, side, cfg.model.template_size)
    return patch


def crop_search(frame, state: TrackerState, kalman: KalmanState | None = None):
    """Search patch around the (predicted) filter centre and its mapping to the frame."""
    cfg = state.cfg
    k = state.kalman if kalman is None else kalman
    _, h, w = frame.shape
    cx = float(np.clip(k.mean[0], 0.0, w))
    cy = float(np.clip(k.mean[1], 0.0, h))
    size = max(k.mean[2], k.mean[3], cfg.tracker.min_size)
    side = cfg.tracker.base_context * size * state.search_scale
    return crop_resample(frame, cx, cy, side, cfg.model.search_size)


def _finite(stage, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite intermediate", stage=stage)


def init(frame, bbox, cfg: RunConfig, model):
    """Start a track from the first frame and its ground-truth box."""
    frame = np.asarray(frame, dtype=np.float64)
    box = np.asarray(bbox, dtype=np.float64).reshape(4)
    _, h, w = frame.shape
    if not (0 <= box[0] < box[2] <= w and 0 <= box[1] < box[3] <= h):
        raise InputError(f"initial box {box.tolist()} is not inside the {w}x{h} frame")
    template = crop_template(frame, box, cfg)
    kalman = kalman_init(box, cfg.kalman)
    state = TrackerState(template, 0, PrototypeBank(cfg.tracker.capacity), kalman, 1.0, 0, 0, cfg)
    search, mapping = crop_search(frame, state)
    loc = model.localize(template, search, mapping)
    _finite("localize", loc.box, loc.sigma)
    _, p_star = model.reliability(loc, mapping.to_patch(box), state.bank)
    _finite("reliability", p_star)
    bank = memory_update(state.bank, Prototype(p_star, 0, 1.0), 1.0, cfg.tracker.threshold)
    return replace(state, bank=bank)


def step(state: TrackerState, frame, model):
    """Advance one frame; returns ``(new_state, FrameReport)``."""
    cfg = state.cfg
    tc = cfg.tracker
    t = state.frame_index + 1
    predicted = kalman_predict(state.kalman, cfg.kalman)
    search, mapping = crop_search(frame, state, predicted)

    loc = model.localize(state.template, search, mapping)
    _finite("localize", loc.box, loc.sigma)
    box_frame = mapping.to_frame(loc.box)
    sigma = loc.sigma * mapping.scale if tc.use_uld else np.ones(4)

    unc_override = None if tc.use_uld else 1.0
    p, p_star = model.reliability(loc, loc.box, state.bank, unc_override=unc_override)
    _finite("reliability", np.asarray(p), p_star)
    if not tc.use_pmn:
        p = 1.0
    gate_open = not tc.use_uld
    accepted = gate_open or p > tc.threshold

    if accepted:
        bank = memory_update(state.bank, Prototype(p_star, t, p), 1.0 if gate_open else p, tc.threshold)
        new_state = replace(
            state,
            template=crop_template(frame, box_frame, cfg),
            template_frame=t,
            bank=bank,
            kalman=kalman_update(predicted, box_frame, cfg.kalman),
            search_scale=1.0,
            last_confident_frame=t,
            frame_index=t,
        )
        out_box = box_frame
    else:
        new_state = replace(state, kalman=predicted, search_scale=2.0, frame_index=t)
        # the localiser's estimate is still the best guess for this frame;
        # the rejection only stops it from steering the filter and memory
        out_box = box_frame
    report = FrameReport(t, np.asarray(out_box, dtype=np.float64), np.asarray(sigma, dtype=np.float64),
                         float(p), bool(accepted), not accepted)
    return new_state, report


def track_sequence(frames, init_box, cfg: RunConfig, model):
    """Run a whole sequence; the first report echoes the initial box."""
    state = init(frames[0], init_box, cfg, model)
    reports = [FrameReport(0, np.asarray(init_box, dtype=np.float64), np.ones(4), 1.0, True, False)]
    states = [state]
    for frame in frames[1:]:
        state, report = step(state, frame, model)
        reports.append(report)
        states.append(state)
    return reports, states
