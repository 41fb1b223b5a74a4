"""Synthetic single-target video sequences.

A textured rectangle moves over a static textured background. Scripted
events alter individual frame windows:

* ``occluded``: a bright clutter block slides over the target, hides it,
  then moves off (it stays in the scene afterwards as a distractor).
* ``deformed``: width and height oscillate in opposite directions.
* ``out_of_view``: the target is pushed past the nearest border and back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import DataConfig
from ..exceptions import SpecError

EVENT_TAGS = ("clean", "occluded", "deformed", "out_of_view")


@dataclass
class SequenceSpec:
    length: int = 60
    frame_size: int = 64
    target_size: tuple = (14.0, 14.0)
    start: tuple | None = None
    velocity: tuple = (1.0, 0.5)
    motion: str = "bounce"  # or "constant_velocity"
    events: list = field(default_factory=list)  # (tag, first_frame, last_frame) inclusive
    noise: float = 0.02
    deform_amplitude: float = 0.3
    occluder_scale: float = 1.2
    escape_speed: float = 0.4  # occluder speed after the window, in target sizes per frame

    def validate(self):
        w, h = self.target_size
        if w <= 0 or h <= 0 or max(w, h) * (1 + self.deform_amplitude) >= self.frame_size:
            raise SpecError(f"target {self.target_size} does not fit a {self.frame_size}px frame")
        if self.length < 1:
            raise SpecError("length must be positive")
        if self.motion not in ("bounce", "constant_velocity"):
            raise SpecError(f"unknown motion model {self.motion!r}")
        for tag, a, b in self.events:
            if tag not in EVENT_TAGS or not 0 <= a <= b < self.length:
                raise SpecError(f"bad event {(tag, a, b)} for length {self.length}")


@dataclass
class SyntheticSequence:
    frames: list
    gt: np.ndarray  # length x 4
    events: list
    seed: int

    def __len__(self):
        return len(self.frames)

    def save(self, path):
        np.savez_compressed(path, frames=np.stack(self.frames), gt=self.gt,
                            events=np.array(self.events), seed=np.array(self.seed))

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            return cls(list(z["frames"]), z["gt"].copy(), [str(e) for e in z["events"]], int(z["seed"]))


def _smooth_texture(rng, channels, size, coarse):
    base = rng.random((channels, coarse, coarse))
    idx = np.linspace(0, coarse - 1, size)
    lo = np.floor(idx).astype(int)
    hi = np.minimum(lo + 1, coarse - 1)
    f = idx - lo
    rows = base[:, lo] * (1 - f)[None, :, None] + base[:, hi] * f[None, :, None]
    return rows[:, :, lo] * (1 - f) + rows[:, :, hi] * f


def _object_texture(rng, res=16):
    """Two-colour pattern (checker or stripes) with a distinct palette."""
    c1, c2 = rng.random(3), rng.random(3)
    while np.abs(c1 - c2).sum() < 0.8:
        c2 = rng.random(3)
    period = int(rng.integers(3, 7))
    yy, xx = np.mgrid[0:res, 0:res]
    kind = rng.integers(3)
    if kind == 0:
        pattern = ((xx // period + yy // period) % 2).astype(float)
    elif kind == 1:
        pattern = ((xx // period) % 2).astype(float)
    else:
        pattern = ((yy // period) % 2).astype(float)
    tex = c1[:, None, None] * pattern + c2[:, None, None] * (1 - pattern)
    border = np.zeros((res, res), bool)
    border[[0, -1], :] = border[:, [0, -1]] = True
    return np.where(border, 0.5 * tex, tex)


def _clutter_texture(rng, res=16):
    """Bright grey block noise, visually unlike any target or the background."""
    cells = 0.7 + 0.3 * rng.random((res // 2, res // 2))
    return np.repeat(np.repeat(cells, 2, 0), 2, 1)[None].repeat(3, 0)


def _paint(frame, tex, box):
    """Draw ``tex`` stretched over ``box``; pixels whose centres lie inside are painted."""
    _, h, w = frame.shape
    x1, y1, x2, y2 = box
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    in_x = (xs >= x1) & (xs < x2)
    in_y = (ys >= y1) & (ys < y2)
    if not in_x.any() or not in_y.any():
        return
    res = tex.shape[-1]
    u = np.clip(((xs[in_x] - x1) / max(x2 - x1, 1e-9) * res).astype(int), 0, res - 1)
    v = np.clip(((ys[in_y] - y1) / max(y2 - y1, 1e-9) * res).astype(int), 0, res - 1)
    rows, cols = np.nonzero(in_y)[0], np.nonzero(in_x)[0]
    frame[:, rows[:, None], cols[None, :]] = tex[:, v][:, :, u]


def _event_windows(spec, length):
    tags = ["clean"] * length
    for tag, a, b in spec.events:
        for t in range(a, b + 1):
            tags[t] = tag
    return tags


def gen_synthetic(spec: SequenceSpec, seed) -> SyntheticSequence:
    """Render ``spec`` deterministically from ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    n, size = spec.length, spec.frame_size
    background = 0.25 + 0.5 * _smooth_texture(rng, 3, size, 6)
    target_tex = _object_texture(rng)
    occluder_tex = _clutter_texture(rng)
    w0, h0 = spec.target_size
    if spec.start is None:
        margin = max(w0, h0) * (1 + spec.deform_amplitude) / 2 + 1
        start = rng.uniform(margin, size - margin, 2)
    else:
        start = np.asarray(spec.start, dtype=np.float64)
    tags = _event_windows(spec, n)

    # centre trajectory of the undisturbed motion
    vel = np.asarray(spec.velocity, dtype=np.float64)
    centers = np.zeros((n, 2))
    pos = start.copy()
    for t in range(n):
        if spec.motion == "constant_velocity":
            centers[t] = start + vel * t
            continue
        centers[t] = pos
        nxt = pos + vel
        half = np.array([w0, h0]) * (1 + spec.deform_amplitude) / 2
        for ax in range(2):
            if nxt[ax] < half[ax] or nxt[ax] > size - half[ax]:
                vel[ax] = -vel[ax]
                nxt[ax] = pos[ax] + vel[ax]
        pos = nxt

    dims = np.tile([w0, h0], (n, 1)).astype(np.float64)
    offsets = np.zeros((n, 2))
    occluders = {}
    for tag, a, b in spec.events:
        span = b - a + 1
        phase = (np.arange(span) + 0.5) / span
        if tag == "deformed":
            s = spec.deform_amplitude * np.sin(np.pi * phase)
            dims[a:b + 1, 0] = w0 * (1 + s)
            dims[a:b + 1, 1] = h0 * (1 - s)
        elif tag == "out_of_view":
            c = centers[a]
            ax = int(np.argmin([min(c[0], size - c[0]), min(c[1], size - c[1])]))
            sign = -1.0 if c[ax] < size / 2 else 1.0
            reach = (min(c[ax], size - c[ax]) + max(w0, h0)) * np.sin(np.pi * phase)
            offsets[a:b + 1, ax] = sign * reach
        elif tag == "occluded":
            # the block slides onto the target, covers it fully by the end of
            # the window, then leaves quickly; an unguarded tracker follows it
            angle = rng.uniform(0, 2 * np.pi)
            direction = np.array([np.cos(angle), np.sin(angle)])
            size_max = max(w0, h0)
            occ_dims = np.array([w0, h0]) * spec.occluder_scale
            for i, t in enumerate(range(a, b + 1)):
                occluders[t] = (direction * 0.6 * size_max * max(0.0, 1.0 - 2.0 * phase[i]), occ_dims)
            for t in range(b + 1, n):
                occluders[t] = (-direction * spec.escape_speed * size_max * (t - b), occ_dims)

    frames, gts = [], []
    for t in range(n):
        frame = background.copy()
        c = centers[t] + offsets[t]
        w, h = dims[t]
        box = np.array([c[0] - w / 2, c[1] - h / 2, c[0] + w / 2, c[1] + h / 2])
        _paint(frame, target_tex, box)
        if t in occluders:
            off, (ow, oh) = occluders[t]
            oc = centers[t] + off
            _paint(frame, occluder_tex, np.array([oc[0] - ow / 2, oc[1] - oh / 2, oc[0] + ow / 2, oc[1] + oh / 2]))
        frame = np.clip(frame + rng.normal(0.0, spec.noise, frame.shape), 0.0, 1.0)
        if tags[t] != "out_of_view":
            box = np.clip(box, 0.0, size)
        frames.append(frame)
        gts.append(box)
    return SyntheticSequence(frames, np.array(gts), tags, int(seed))


def random_spec(rng, data: DataConfig, occlusion_prob=None):
    """Draw a bounce-motion spec with randomly scripted events."""
    occlusion_prob = data.occlusion_prob if occlusion_prob is None else occlusion_prob
    n = data.length
    w, h = rng.uniform(data.min_target, data.max_target, 2)
    angle = rng.uniform(0, 2 * np.pi)
    speed = data.speed * rng.uniform(0.5, 1.5)
    events = []
    taken = np.zeros(n, bool)

    def place(tag, span):
        span = min(span, n - 6)
        for _ in range(20):
            a = int(rng.integers(5, n - span + 1))
            if not taken[a - 2:a + span + 2].any():
                taken[a:a + span] = True
                events.append((tag, a, a + span - 1))
                return

    if rng.random() < occlusion_prob:
        place("occluded", data.occlusion_length)
    if rng.random() < data.deform_prob:
        place("deformed", data.occlusion_length)
    if rng.random() < data.out_of_view_prob:
        place("out_of_view", data.occlusion_length)
    events.sort(key=lambda e: e[1])
    return SequenceSpec(length=n, frame_size=data.frame_size, target_size=(float(w), float(h)),
                        velocity=(speed * np.cos(angle), speed * np.sin(angle)), events=events)


def make_corpus(data: DataConfig, count, seed, occlusion_prob=None):
    """``count`` sequences; the i-th depends only on ``(seed, i)``."""
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        spec = random_spec(rng, data, occlusion_prob)
        out.append(gen_synthetic(spec, int(rng.integers(2 ** 31))))
    return out
