"""Reverse-mode tensor with an explicit graph and a topological backward pass."""
from __future__ import annotations

import numpy as np

from ..errors import MixedPrecision, NonScalarLoss, ShapeMismatch

FLOAT32 = np.dtype(np.float32)
FLOAT64 = np.dtype(np.float64)


class Tensor:
    """N-d array that records the op which produced it.

    Leaves created with ``requires_grad=True`` accumulate into ``grad`` on every
    :meth:`backward`; interior nodes only hold gradients transiently.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None, _parents=(), _backward=None):
        dtype = np.dtype(dtype) if dtype is not None else None
        if isinstance(data, np.ndarray) and dtype is None and data.dtype in (FLOAT32, FLOAT64):
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype or FLOAT32)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # promotes 0-d, so only when needed
        if arr.dtype not in (FLOAT32, FLOAT64):
            raise MixedPrecision(f"tensors are float32 or float64, not {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad) or bool(_parents)
        self.grad = np.zeros_like(arr) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise NonScalarLoss(f"backward needs a scalar, got shape {self.shape}")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.grad is not None:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # elementwise arithmetic, same-shape operands or python scalars only
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(-self, other)

    def sum(self):
        return tsum(self)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def check_dtypes(*tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise MixedPrecision(f"cannot mix {dt} and {t.dtype} in one graph")
    return dt


def make(data, parents, backward):
    return Tensor(data, _parents=tuple(parents), _backward=backward)


def add(a, b):
    if isinstance(b, Tensor):
        check_dtypes(a, b)
        if a.shape != b.shape:
            raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
        return make(a.data + b.data, (a, b), lambda g: (g, g))
    c = a.dtype.type(b)
    return make(a.data + c, (a,), lambda g: (g,))


def mul(a, b):
    if isinstance(b, Tensor):
        check_dtypes(a, b)
        if a.shape != b.shape:
            raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
        return make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    c = a.dtype.type(b)
    return make(a.data * c, (a,), lambda g: (g * c,))


def tsum(a):
    shape = a.shape
    return make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.full(shape, g, dtype=g.dtype),))
