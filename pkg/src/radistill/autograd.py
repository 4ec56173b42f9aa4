"""Reverse-mode differentiation over numpy arrays.

Every op records its parents and a closure that maps the output gradient to
parent gradients. The op set is small and fixed (matmul, elementwise
activations, gathers for grid lookups, volume compositing) so each backward
rule is written out by hand next to its forward.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED[0]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, grad: np.ndarray | None = None,
                 name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.requires_grad = requires_grad
        # leaf params pass a view into the flat gradient buffer
        self.grad = grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: Iterable[Tensor], fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(leaf) into every leaf's ``grad`` buffer."""
    if not root.requires_grad:
        return
    if grad is None:
        grad = np.ones_like(root.data)
    grads: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
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


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim == 0 and not b.requires_grad:
        s = b.data
        return _make(a.data * s, (a,), lambda g: (g * s,))
    sa, sb = a.shape, b.shape
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,),
                 lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; derivative is zero outside the open interval."""
    inside = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


# ---------------------------------------------------------------- reductions

def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    if axis is None:
        return _make(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).astype(x.dtype),))
    out = x.data.sum(axis=axis)

    def fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(x.dtype),)
    return _make(out, (x,), fn)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def mse(a, b) -> Tensor:
    """Mean squared error over every element."""
    a, b = as_tensor(a), as_tensor(b)
    diff = a.data - b.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff)) if n else np.asarray(0.0, dtype=a.dtype)

    def fn(g):
        gd = (2.0 / n) * g * diff
        return gd, -gd
    return _make(val, (a, b), fn)


# ---------------------------------------------------------------- shaping

def matmul(x: Tensor, w: Tensor) -> Tensor:
    return _make(x.data @ w.data, (x, w),
                 lambda g: (g @ w.data.T, x.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` fused; ``w`` is (in, out)."""
    y = x.data @ w.data
    if b is None:
        return _make(y, (x, w), lambda g: (g @ w.data.T, x.data.T @ g))
    y += b.data
    return _make(y, (x, w, b), lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([p.data for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x: Tensor, key) -> Tensor:
    shape = x.shape

    def fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[key] = g
        return (out,)
    return _make(x.data[key], (x,), fn)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def scatter_rows(x: Tensor, rows: np.ndarray, n: int, fill: float = 0.0) -> Tensor:
    """Place the rows of ``x`` at ``rows`` of an ``n``-row array filled with ``fill``."""
    out = np.full((n,) + x.shape[1:], fill, dtype=x.dtype)
    out[rows] = x.data
    return _make(out, (x,), lambda g: (g[rows],))


# ---------------------------------------------------------------- lookups

def gather_blend(table: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted gather ``sum_c weights[..., c] * table[idx[..., c]]``.

    ``table`` is (rows, F); ``idx`` and ``weights`` share shape (..., C).
    Output is (..., F). This carries trilinear, bilinear and linear
    interpolation for every grid-like store.
    """
    rows, F = table.shape
    lead = idx.shape[:-1]
    idx2 = np.ascontiguousarray(idx.reshape(-1, idx.shape[-1]))
    w2 = np.ascontiguousarray(weights.reshape(idx2.shape), dtype=table.dtype)
    out = _kernels.blend_forward(np.ascontiguousarray(table.data), idx2, w2).reshape(lead + (F,))

    def fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, F), dtype=table.dtype)
        return (_kernels.blend_backward(idx2, w2, g2, rows),)
    return _make(out, (table,), fn)


def rowwise_dot(coeffs: Tensor, basis: np.ndarray) -> Tensor:
    """(N, C, K) coefficients against a constant (N, K) basis -> (N, C)."""
    out = np.einsum("nck,nk->nc", coeffs.data, basis)
    return _make(out, (coeffs,), lambda g: (g[:, :, None] * basis[:, None, :],))


def composite_rgb(sigma: Tensor, rgb: Tensor, deltas: np.ndarray, background):
    """Volume compositing of per-sample density/colour along each ray.

    ``sigma`` is (R, N), ``rgb`` is (R, N, 3), ``deltas`` (R, N).
    Returns (pixel Tensor (R, 3), weights (R, N) array). Opacity uses
    ``max(sigma, 0)``; raw negative values get zero gradient.
    """
    s = np.maximum(sigma.data, 0)
    sd = s * deltas
    csum = np.cumsum(sd, axis=1)
    excl = np.zeros_like(csum)
    excl[:, 1:] = csum[:, :-1]
    T = np.exp(-excl)
    T_next = np.exp(-csum)
    w = T - T_next                                # == T * (1 - exp(-sd))
    bg = np.asarray(background, dtype=rgb.dtype)
    acc = w.sum(axis=1)
    pix = np.einsum("rn,rnc->rc", w, rgb.data) + (1.0 - acc)[:, None] * bg

    def fn(g):
        g_rgb = w[:, :, None] * g[:, None, :]
        e = np.einsum("rnc,rc->rn", rgb.data - bg, g)
        we = w * e
        # suffix sum over samples strictly after each one
        tail = np.cumsum(we[:, ::-1], axis=1)[:, ::-1] - we
        g_sigma = deltas * (T_next * e - tail) * (sigma.data > 0)
        return g_sigma.astype(sigma.dtype, copy=False), g_rgb.astype(rgb.dtype, copy=False)
    return _make(pix.astype(rgb.dtype, copy=False), (sigma, rgb), fn), w
