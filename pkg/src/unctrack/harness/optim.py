"""Momentum SGD and Adam over a subset of a ParamStore."""

from __future__ import annotations

import numpy as np

from ..config import TrainConfig


class Optimizer:
    def __init__(self, params, names, cfg: TrainConfig):
        self.params = params
        self.names = list(names)
        self.cfg = cfg
        self.t = 0
        self.state = {n: (np.zeros(params[n].shape), np.zeros(params[n].shape)) for n in self.names}

    def step(self, grads, lr=None):
        lr = self.cfg.lr if lr is None else lr
        self.t += 1
        for n in self.names:
            g = grads[self.params[n]] + self.cfg.weight_decay * self.params[n].data
            self.params[n] = self.params[n].data - lr * self._direction(n, g)

    def _direction(self, name, g):
        raise NotImplementedError


class SGD(Optimizer):
    def _direction(self, name, g):
        m, _ = self.state[name]
        m = self.cfg.momentum * m + g
        self.state[name] = (m, None)
        return m


class Adam(Optimizer):
    b1, b2, eps = 0.9, 0.999, 1e-8

    def _direction(self, name, g):
        m, v = self.state[name]
        m = self.b1 * m + (1 - self.b1) * g
        v = self.b2 * v + (1 - self.b2) * g * g
        self.state[name] = (m, v)
        mhat = m / (1 - self.b1 ** self.t)
        vhat = v / (1 - self.b2 ** self.t)
        return mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(params, names, cfg: TrainConfig):
    return (Adam if cfg.optimizer == "adam" else SGD)(params, names, cfg)


def cosine_lr(base, step, total, warmup=50):
    if step < warmup:
        return base * (step + 1) / warmup
    frac = (step - warmup) / max(total - warmup, 1)
    return base * 0.5 * (1 + np.cos(np.pi * min(frac, 1.0)))
