"""Flat parameter storage, gradient evaluation, Adam and finite-difference checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autograd import Tensor, no_grad


class NonFiniteError(FloatingPointError):
    """Raised when a loss, parameter or gradient stops being finite."""

    def __init__(self, message: str, segment: str | None = None):
        super().__init__(message)
        self.segment = segment


@dataclass
class Segment:
    name: str
    offset: int
    shape: tuple
    lr_scale: float = 1.0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class ParamStore:
    """One flat value buffer and a same-length gradient buffer, cut into named segments."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.segments: dict[str, Segment] = {}
        self.values = np.zeros(0, dtype=self.dtype)
        self.grads = np.zeros(0, dtype=self.dtype)
        self._tensors: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return self.values.size

    def __contains__(self, name: str) -> bool:
        return name in self.segments

    def add(self, name: str, init: np.ndarray, lr_scale: float = 1.0) -> None:
        if name in self.segments:
            raise KeyError(f"segment {name!r} already exists")
        init = np.asarray(init, dtype=self.dtype)
        seg = Segment(name, self.values.size, tuple(init.shape), lr_scale)
        self.values = np.concatenate([self.values, init.reshape(-1)])
        self.grads = np.zeros_like(self.values)
        self.segments[name] = seg
        self._tensors.clear()

    def view(self, name: str) -> np.ndarray:
        seg = self.segments[name]
        return self.values[seg.offset:seg.offset + seg.size].reshape(seg.shape)

    def grad_view(self, name: str) -> np.ndarray:
        seg = self.segments[name]
        return self.grads[seg.offset:seg.offset + seg.size].reshape(seg.shape)

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor whose gradient accumulates straight into the flat buffer."""
        t = self._tensors.get(name)
        if t is None:
            t = Tensor(self.view(name), requires_grad=True, grad=self.grad_view(name), name=name)
            self._tensors[name] = t
        return t

    def zero_grad(self) -> None:
        self.grads[...] = 0

    def lr_scales(self) -> np.ndarray:
        out = np.ones(self.values.size, dtype=self.dtype)
        for seg in self.segments.values():
            out[seg.offset:seg.offset + seg.size] = seg.lr_scale
        return out

    def first_nonfinite(self, buf: str = "values") -> str | None:
        arr = self.values if buf == "values" else self.grads
        for seg in self.segments.values():
            if not np.all(np.isfinite(arr[seg.offset:seg.offset + seg.size])):
                return seg.name
        return None

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        out.segments = {k: Segment(s.name, s.offset, s.shape, s.lr_scale)
                        for k, s in self.segments.items()}
        out.values = self.values.astype(dtype)
        out.grads = np.zeros_like(out.values)
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    def layout(self) -> list[dict]:
        return [{"name": s.name, "shape": list(s.shape), "lr_scale": s.lr_scale}
                for s in self.segments.values()]

    @classmethod
    def from_layout(cls, layout: Sequence[dict], values: np.ndarray, dtype=np.float32) -> "ParamStore":
        store = cls(dtype)
        offset = 0
        for entry in layout:
            seg = Segment(entry["name"], offset, tuple(entry["shape"]), float(entry.get("lr_scale", 1.0)))
            store.segments[seg.name] = seg
            offset += seg.size
        if offset != values.size:
            raise ValueError(f"layout covers {offset} values, payload has {values.size}")
        store.values = np.asarray(values, dtype=dtype).copy()
        store.grads = np.zeros_like(store.values)
        return store


def backward(loss_fn: Callable[[], Tensor], stores: ParamStore | Iterable[ParamStore],
             accumulate: bool = False) -> float:
    """Evaluate ``loss_fn`` and fill the stores' gradient buffers.

    With ``accumulate=False`` gradients are zeroed first.
    """
    stores = [stores] if isinstance(stores, ParamStore) else list(stores)
    if not accumulate:
        for s in stores:
            s.zero_grad()
    loss = loss_fn()
    value = float(loss.data)
    if not math.isfinite(value):
        bad = next((s.first_nonfinite() for s in stores if s.first_nonfinite()), None)
        raise NonFiniteError(f"loss is {value}; first non-finite segment: {bad or 'none (inputs)'}", bad)
    loss.backward()
    for s in stores:
        bad = s.first_nonfinite("grads")
        if bad is not None:
            raise NonFiniteError(f"non-finite gradient in segment {bad!r}", bad)
    return value


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scales: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def for_store(cls, store: ParamStore, lr: float = 0.02, **kw) -> "AdamState":
        return cls(np.zeros_like(store.values), np.zeros_like(store.values), lr=lr,
                   scales=store.lr_scales(), **kw)


def adam_step(store: ParamStore, state: AdamState, lr: float | None = None) -> None:
    """Bias-corrected Adam update in place, then zero the gradients."""
    g = store.grads
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient before Adam step", store.first_nonfinite("grads"))
    lr = state.lr if lr is None else lr
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * g
    state.v *= b2
    state.v += (1 - b2) * (g * g)
    m_hat = state.m / (1 - b1 ** t)
    v_hat = state.v / (1 - b2 ** t)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    if state.scales is not None:
        update *= state.scales
    store.values -= (lr * update).astype(store.dtype, copy=False)
    store.zero_grad()


def lr_schedule(step: int, total: int, base_lr: float = 0.02) -> float:
    """Exponential decay to one tenth of ``base_lr`` at ``step == total``."""
    if total <= 0:
        return base_lr
    return base_lr * 0.1 ** (step / total)


def grad_check(loss_fn: Callable[[], Tensor], store: ParamStore, n_params: int = 100,
               eps: float = 1e-5, seed: int = 0, indices: np.ndarray | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``store`` should be 64-bit. Sampled indices favour parameters on the
    compute path (nonzero analytic gradient); a quarter as many untouched
    parameters are mixed in to confirm they stay at zero.
    """
    backward(loss_fn, store)
    analytic = store.grads.copy()
    if indices is None:
        rng = np.random.default_rng(seed)
        touched = np.flatnonzero(analytic != 0)
        untouched = np.flatnonzero(analytic == 0)
        picks = [rng.choice(touched, size=min(n_params, touched.size), replace=False)]
        if untouched.size:
            picks.append(rng.choice(untouched, size=min(max(n_params // 4, 1), untouched.size),
                                    replace=False))
        indices = np.concatenate(picks)
    worst = 0.0
    with no_grad():
        for i in indices:
            orig = store.values[i]
            store.values[i] = orig + eps
            up = float(loss_fn().data)
            store.values[i] = orig - eps
            down = float(loss_fn().data)
            store.values[i] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic[i])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    store.zero_grad()
    return worst
