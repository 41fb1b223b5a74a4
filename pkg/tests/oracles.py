"""Brute-force reference implementations used as independent test oracles.

Loops only; nothing here touches the package's numerics.
"""

import math

import numpy as np


def matmul_naive(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_naive(x, w, stride=1, pad=0):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            acc += xp[c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                out[o, i, j] = acc
    return out


def gap_naive(x):
    return np.array([sum(float(v) for v in x[c].ravel()) / x[c].size for c in range(x.shape[0])])


def reweight_naive(p, f, mask):
    """Explicit-loop masked softmax pooling of feature columns."""
    c, h, w = f.shape
    scores = {}
    for i in range(h):
        for j in range(w):
            if mask[i, j] == 0.0:
                scores[(i, j)] = sum(p[t] * f[t, i, j] for t in range(c))
    top = max(scores.values())
    weights = {key: math.exp(s - top) for key, s in scores.items()}
    z = sum(weights.values())
    out = np.zeros(c)
    for (i, j), wt in weights.items():
        out += (wt / z) * f[:, i, j]
    return out


def cosine_naive(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def topk_naive(query, bank, k):
    """Indices of the k most similar entries; ties go to the newer (higher) index."""
    sims = [(cosine_naive(query, entry), i) for i, entry in enumerate(bank)]
    sims.sort(key=lambda t: (t[0], t[1]), reverse=True)
    return [i for _, i in sims[:min(k, len(bank))]]


def box_iou_naive(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0
