"""A small dense-tensor engine with reverse-mode differentiation.

Only the operators WeaveNet and its losses need are provided.  Tensors wrap
numpy arrays; each op records its parents and a closure that maps the output
gradient to parent gradients.  Binary elementwise ops accept numpy-style
broadcasting and reduce gradients back to the operand shapes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires grad."""
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg


# ------------------------------------------------------------ elementwise

def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    b_is_t = isinstance(b, Tensor)
    a = _wrap(a, b if b_is_t else None)
    b = _wrap(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def abs_(x: Tensor) -> Tensor:
    # subgradient 0 at the origin
    s = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (g * s,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g * 0.5 / out,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a = _wrap(a)
    b = _wrap(b, a)
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a = _wrap(a)
    b = _wrap(b, a)
    pick_a = a.data >= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """max(x, 0) + alpha * min(x, 0); ``alpha`` is one shared slope or one per channel."""
    xd = x.data
    pos = (xd >= 0).astype(xd.dtype)
    a = alpha.data
    slope = a + (1 - a) * pos

    def back(g):
        return g * slope, _unbroadcast(g * xd * (1 - pos), alpha.shape)

    return _node(xd * slope, (x, alpha), back)


# ------------------------------------------------------------ reductions

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def dot(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    return sum_(mul(a, b), axis=axis)


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    return sqrt(sum_(mul(x, x), axis=axis))


# ------------------------------------------------------------ shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swap_axes(x: Tensor, a: int = -3, b: int = -2) -> Tensor:
    """Exchange two axes; the defaults swap the agent and candidate axes of a (..., N, M, D) tensor."""
    return _node(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def concat_features(xs: Sequence[Tensor]) -> Tensor:
    return concat(xs, axis=-1)


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    size = x.shape[axis] // sections
    out = []
    for k in range(sections):
        idx = [slice(None)] * x.data.ndim
        idx[axis] = slice(k * size, (k + 1) * size)
        idx = tuple(idx)

        def back(g, idx=idx):
            full = np.zeros_like(x.data)
            full[idx] = g
            return (full,)

        out.append(_node(x.data[idx], (x,), back))
    return out


def roll(x: Tensor, shift: int, axis: int = 0) -> Tensor:
    return _node(np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, -shift, axis=axis),))


def repeat_set(x: Tensor, size: int, axis: int = -2) -> Tensor:
    """Insert a new set axis of length ``size`` by copying (..., D) -> (..., size, D)."""
    expanded = np.expand_dims(x.data, axis)
    shape = list(expanded.shape)
    shape[axis] = size
    return _node(np.broadcast_to(expanded, shape), (x,), lambda g: (g.sum(axis=axis),))


# ------------------------------------------------------------ network ops

def linear_feature(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Kernel-size-1 convolution: ``x @ w + b`` over the last (feature) axis."""
    xd, wd = x.data, w.data
    din, dout = wd.shape
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, din)
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(*lead, dout)

    def back(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ wd.T).reshape(*lead, din)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes must match)."""
    a = _wrap(a)
    b = _wrap(b, a)
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b),
                 lambda g: (_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape),
                            _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)))


def max_over_set(x: Tensor, axis: int = -2) -> Tensor:
    """Max over the set axis; the gradient goes to the lowest-index maximiser."""
    out = x.data.max(axis=axis, keepdims=True)

    def back(g):
        mask = x.data == out
        if (mask.sum(axis=axis) > 1).any():
            mask &= np.cumsum(mask, axis=axis) == 1
        return (mask * np.expand_dims(g, axis),)

    return _node(np.squeeze(out, axis), (x,), back)


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalisation over every axis but the last."""
    c = x.shape[-1]
    xd = x.data
    if not training:
        scale = gamma.data / np.sqrt(state.var + state.eps)
        shift = beta.data - state.mean * scale
        out = xd * scale + shift
        mu, sd = state.mean, np.sqrt(state.var + state.eps)

        def back_eval(g):
            xhat = (xd - mu) / sd
            return g * scale, (g * xhat).reshape(-1, c).sum(0), g.reshape(-1, c).sum(0)

        return _node(out, (x, gamma, beta), back_eval)
    flat = xd.reshape(-1, c)
    count = flat.shape[0]
    mu = flat.mean(axis=0)
    var = flat.var(axis=0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data
    m = state.momentum
    unbiased = var * count / max(count - 1, 1)
    state.mean = ((1 - m) * state.mean + m * mu).astype(state.mean.dtype)
    state.var = ((1 - m) * state.var + m * unbiased).astype(state.var.dtype)

    def back(g):
        g2 = g.reshape(-1, c)
        xh2 = xhat.reshape(-1, c)
        dbeta = g2.sum(0)
        dgamma = (g2 * xh2).sum(0)
        dxhat = g2 * gamma.data
        dx = inv * (dxhat - dxhat.mean(0) - xh2 * (dxhat * xh2).mean(0))
        return dx.reshape(xd.shape), dgamma, dbeta

    return _node(out, (x, gamma, beta), back)


# ------------------------------------------------------------ parameters & Adam

class Parameter(Tensor):
    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, name=name, dtype=dtype)
        self.trainable = trainable


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr, self.beta1, self.beta2, self.eps, self.t)


def adam_step(params, m, v, lr, beta1, beta2, eps, t) -> None:
    """One bias-corrected Adam update in place; parameters without a gradient are skipped."""
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for p, mi, vi in zip(params, m, v):
        if p.grad is None:
            continue
        g = p.grad
        mi *= beta1
        mi += (1 - beta1) * g
        vi *= beta2
        vi += (1 - beta2) * g * g
        p.data -= (lr * (mi / c1) / (np.sqrt(vi / c2) + eps)).astype(p.data.dtype)


# ------------------------------------------------------------ checkpoints
#
# Layout (all integers little-endian):
#   magic   8 bytes  b"WNCKPT\0\0"
#   version u32
#   hlen    u64      length of the UTF-8 JSON header that follows
#   header  hlen bytes: {"meta": {...}, "arrays": [{"name", "dtype", "shape",
#                        "offset", "nbytes"}, ...]}; offsets are relative to the
#                        start of the data section
#   data    concatenated little-endian C-order buffers

CKPT_MAGIC = b"WNCKPT\0\0"
CKPT_VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(buf[start:start + hlen])
    base = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(buf[lo:lo + e["nbytes"]], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
