"""Tracking runs, per-frame CSV traces and corpus-level metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import replace

import numpy as np

from ..config import RunConfig
from ..exceptions import InputError
from ..losses import box_iou
from ..model import UncTrackModel
from ..runtime.tracker import track_sequence

CSV_COLUMNS = ("frame", "x_tl", "y_tl", "x_br", "y_br", "sigma_xtl", "sigma_ytl", "sigma_xbr",
               "sigma_ybr", "confidence", "accepted", "resampled", "event_tag", "iou_gt")

# (name, use_uld, use_pmn), in the order of the 2x2 ablation grid
VARIANTS = (("full", True, True), ("no_uld", False, True), ("no_pmn", True, False), ("neither", False, False))


def variant_config(cfg: RunConfig, use_uld, use_pmn):
    out = cfg.copy()
    out.tracker = replace(out.tracker, use_uld=use_uld, use_pmn=use_pmn)
    return out


def _num(x):
    return repr(float(x))


def trace_rows(reports, seq):
    """One CSV row per frame; frame 0 echoes the initial box."""
    rows = []
    for r in reports:
        iou = float(box_iou(r.box, seq.gt[r.frame]))
        rows.append({
            "frame": r.frame,
            **{k: float(v) for k, v in zip(CSV_COLUMNS[1:5], r.box)},
            **{k: float(v) for k, v in zip(CSV_COLUMNS[5:9], r.sigma)},
            "confidence": float(r.confidence),
            "accepted": int(r.accepted),
            "resampled": int(r.resampled),
            "event_tag": seq.events[r.frame],
            "iou_gt": iou,
        })
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_num(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def summarize(rows):
    """Mean IoU over all rows; acceptance rate and per-tag sigma over tracked frames (frame > 0)."""
    tracked = [r for r in rows if r["frame"] > 0]
    sigma = {}
    for r in tracked:
        sigma.setdefault(r["event_tag"], []).append(np.mean([r[c] for c in CSV_COLUMNS[5:9]]))
    return {
        "frames": len(rows),
        "mean_iou": float(np.mean([r["iou_gt"] for r in rows])),
        "acceptance_rate": float(np.mean([r["accepted"] for r in tracked])) if tracked else 1.0,
        "mean_sigma_by_tag": {tag: float(np.mean(v)) for tag, v in sorted(sigma.items())},
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run_track(cfg: RunConfig, model, seq):
    """Track one sequence; returns ``(rows, summary)``."""
    reports, _ = track_sequence(seq.frames, seq.gt[0], cfg, model)
    rows = trace_rows(reports, seq)
    return rows, summarize(rows)


def evaluate(cfg: RunConfig, params, corpus, variants=VARIANTS, model_factory=None):
    """Per-sequence and aggregate metrics for each tracker variant.

    ``model_factory(cfg, params)`` builds the inference model (defaults to
    :class:`UncTrackModel`); tests use it to inject stubs.
    """
    if len(corpus) == 0:
        raise InputError("evaluation corpus is empty")
    factory = model_factory or (lambda c, p: UncTrackModel(c.model, p))
    rows_out = []
    for name, use_uld, use_pmn in variants:
        vcfg = variant_config(cfg, use_uld, use_pmn)
        model = factory(vcfg, params)
        per_seq = []
        for i, seq in enumerate(corpus):
            _, summary = run_track(vcfg, model, seq)
            per_seq.append({"sequence": i, "seed": seq.seed, **summary})
        rows_out.append({"variant": name, "use_uld": use_uld, "use_pmn": use_pmn,
                         "sequences": per_seq, "aggregate": aggregate(per_seq)})
    return {"variants": rows_out}


def aggregate(per_seq):
    """Frame-weighted means across sequences, plus per-tag sigma."""
    frames = np.array([s["frames"] for s in per_seq], dtype=np.float64)
    tracked = frames - 1
    iou = np.array([s["mean_iou"] for s in per_seq])
    acc = np.array([s["acceptance_rate"] for s in per_seq])
    tags = sorted({t for s in per_seq for t in s["mean_sigma_by_tag"]})
    sigma = {}
    for tag in tags:
        vals = [s["mean_sigma_by_tag"][tag] for s in per_seq if tag in s["mean_sigma_by_tag"]]
        sigma[tag] = float(np.mean(vals))
    return {
        "sequences": len(per_seq),
        "frames": int(frames.sum()),
        "mean_iou": float(np.sum(iou * frames) / frames.sum()),
        "acceptance_rate": float(np.sum(acc * tracked) / max(tracked.sum(), 1.0)),
        "mean_sigma_by_tag": sigma,
    }
