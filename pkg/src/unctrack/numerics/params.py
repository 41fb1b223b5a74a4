"""Named parameter storage and seeded initialisation."""

from __future__ import annotations

from collections.abc import MutableMapping

import numpy as np

from ..exceptions import NumericalError
from .autodiff import Tensor


class ParamStore(MutableMapping):
    """Mapping ``name -> Tensor`` iterated in lexicographic name order.

    Stored tensors are leaves with ``requires_grad`` set, so any forward pass
    recorded on a tape yields gradients for them.
    """

    def __init__(self, items=None):
        self._data: dict[str, Tensor] = {}
        if items:
            for name, value in dict(items).items():
                self[name] = value

    def __getitem__(self, name):
        return self._data[name]

    def __setitem__(self, name, value):
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"parameter {name!r} is not finite")
        self._data[name] = Tensor(arr, requires_grad=True)

    def __delitem__(self, name):
        del self._data[name]

    def __iter__(self):
        return iter(sorted(self._data))

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        return f"ParamStore({len(self)} arrays, {self.num_values()} values)"

    def num_values(self):
        return int(sum(t.size for t in self._data.values()))

    def arrays(self):
        return {name: self._data[name].data for name in self}

    def copy(self):
        return ParamStore({name: self._data[name].data.copy() for name in self})

    def subset(self, prefixes):
        prefixes = tuple(prefixes)
        return [name for name in self if name.startswith(prefixes)]

    def update(self, other=(), **kw):
        for name, value in dict(other, **kw).items():
            self[name] = value

    def equals(self, other, names=None):
        names = list(self) if names is None else list(names)
        return all(name in other and np.array_equal(self[name].data, other[name].data) for name in names)


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Initializer:
    """Builds parameter arrays from one seeded generator in a fixed order."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.store = ParamStore()

    def dense(self, name, n_in, n_out, bias=True):
        self.store[f"{name}.w"] = glorot(self.rng, (n_in, n_out), n_in, n_out)
        if bias:
            self.store[f"{name}.b"] = np.zeros(n_out)

    def conv(self, name, c_in, c_out, k, bias=True):
        self.store[f"{name}.w"] = glorot(self.rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)
        if bias:
            self.store[f"{name}.b"] = np.zeros(c_out)

    def affine(self, name, channels):
        self.store[f"{name}.scale"] = np.ones(channels)
        self.store[f"{name}.shift"] = np.zeros(channels)

    def norm(self, name, width):
        self.store[f"{name}.g"] = np.ones(width)
        self.store[f"{name}.b"] = np.zeros(width)

    def table(self, name, rows, cols):
        self.store[name] = glorot(self.rng, (rows, cols), rows, cols)

    def constant(self, name, value):
        self.store[name] = np.asarray(value, dtype=np.float64)
