"""Tensor type, recording tape and reverse-mode accumulation.

Every differentiable primitive is a pair ``(fwd, vjp)`` of pure numpy
functions. ``apply`` evaluates ``fwd`` and, when a tape is active and some
input requires a gradient, appends a :class:`Node` to it. ``backward`` walks
the tape in reverse and calls each node's ``vjp``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..exceptions import ContractError

_TAPES: list = []


class Tensor:
    """Immutable float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    # -- array protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar (implemented in ops) -----------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    name: str
    fwd: Callable
    vjp: Callable
    inputs: tuple
    output: Tensor
    attrs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of the primitives evaluated while it was active.

    Use as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def replay(self):
        """Re-run every recorded primitive from the leaf values.

        Returns a list with one recomputed output per node, in tape order.
        """
        fresh: dict[int, np.ndarray] = {}
        results = []
        for node in self.nodes:
            args = [fresh.get(id(x), x.data) for x in node.inputs]
            out = node.fwd(*args, **node.attrs)
            fresh[id(node.output)] = out
            results.append(out)
        return results

    def replay_matches(self):
        """True when replaying reproduces every stored output bit for bit."""
        for node, out in zip(self.nodes, self.replay()):
            stored = node.output.data
            if stored.shape != np.shape(out) or stored.tobytes() != np.asarray(out, np.float64).tobytes():
                return False
        return True


class no_grad:
    """Suspend recording inside the block."""

    def __enter__(self):
        _TAPES.append(None)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False


def current_tape():
    return _TAPES[-1] if _TAPES else None


def apply(name, fwd, vjp, inputs, **attrs):
    """Evaluate a primitive and record it on the active tape if needed."""
    inputs = tuple(as_tensor(x) for x in inputs)
    out = Tensor(fwd(*(x.data for x in inputs), **attrs))
    tape = current_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(name, fwd, vjp, inputs, out, attrs))
    return out


class Gradients:
    """Mapping from tensors to accumulated gradients.

    Tensors that did not influence the output map to zeros of their shape.
    """

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._grads.get(id(tensor))
        if g is None:
            return np.zeros(tensor.shape)
        return g

    def __contains__(self, tensor):
        return id(tensor) in self._grads


def backward(tape: Tape, output: Tensor) -> Gradients:
    """Reverse accumulation of d(output)/d(every recorded input)."""
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, Any] = {id(output): np.ones(output.shape)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.vjp(g, node.output.data, *(x.data for x in node.inputs), **node.attrs)
        for x, gx in zip(node.inputs, in_grads):
            if gx is None or not x.requires_grad:
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx
    # restore the seed for callers asking about the output itself
    grads.setdefault(id(output), np.ones(output.shape))
    return Gradients(grads)


def value_and_grad(f):
    """Evaluate ``f()`` on a fresh tape; return (value, gradients)."""
    with Tape() as tape:
        out = f()
    return out.item(), backward(tape, out)
