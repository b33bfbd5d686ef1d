"""Dense channels-last tensors with reverse-mode automatic differentiation.

Only the operator set the segmentation network needs is provided. Every op
records a node (parents + backward rule) on its output when any input requires
a gradient; ``Tensor.backward`` collects the reachable nodes into a ``Tape``
and replays them in reverse recording order.
"""
from __future__ import annotations

import contextlib
import itertools
import json
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_state = {"dtype": np.float32, "grad": True}
_seq = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@contextlib.contextmanager
def float64_mode():
    """Create new tensors (and constants inside ops) in 64-bit precision."""
    prev = _state["dtype"]
    _state["dtype"] = np.float64
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def default_dtype():
    return _state["dtype"]


class _Node:
    __slots__ = ("parents", "backward", "seq")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward
        self.seq = next(_seq)


class Tensor:
    """N-dimensional float array with an optional gradient buffer."""

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != default_dtype():
            arr = arr.astype(default_dtype())
        if arr.ndim == 0:
            raise ShapeError("zero-dimensional tensors are not allowed; use shape (1,)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    # ---- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}{flag})"

    # ---- autodiff ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without a seed gradient needs a single-element tensor")
            grad = np.ones_like(self.data)
        tape = Tape.collect(self)
        tape.run(self, np.asarray(grad, dtype=self.dtype))

    # ---- operator sugar ------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Tape:
    """Op nodes reachable from an output, in recording order."""

    def __init__(self, tensors: list[Tensor]):
        self.tensors = tensors

    def __len__(self):
        return len(self.tensors)

    @classmethod
    def collect(cls, out: Tensor) -> Tape:
        seen: set[int] = set()
        found: list[Tensor] = []
        stack = [out]
        while stack:
            t = stack.pop()
            if t._node is None or id(t) in seen:
                continue
            seen.add(id(t))
            found.append(t)
            stack.extend(t._node.parents)
        found.sort(key=lambda t: t._node.seq)
        return cls(found)

    def run(self, out: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(out): seed}
        leaves: dict[int, Tensor] = {}
        if out._node is None and out.requires_grad:
            leaves[id(out)] = out
        for t in reversed(self.tensors):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            parent_grads = t._node.backward(g)
            for p, pg in zip(t._node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"gradient shape {pg.shape} != tensor shape {p.shape}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if p._node is None:
                    leaves[key] = p
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.astype(leaf.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---- helpers ---------------------------------------------------------------

def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.atleast_1d(np.asarray(x, dtype=default_dtype())))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite values produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = _state["grad"] and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._node = _Node(tuple(parents), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)
    return _make(out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the error-function CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)
    return _make(out, (x,), backward)


# ---- reductions and shape ops ---------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    if out.ndim == 0:
        out = out.reshape(1)

    def backward(g):
        if not keepdims:
            g = g.reshape([1 if i in axes else n for i, n in enumerate(x.shape)])
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axes, keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis):
            raise ShapeError(f"concat shape mismatch: {tensors[0].shape} vs {t.shape} (axis {axis})")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def interleave(a: Tensor, b: Tensor, group: int = 1) -> Tensor:
    """Alternate channel groups of two equal-shape maps: a0 b0 a1 b1 ..."""
    if a.shape != b.shape:
        raise ShapeError(f"interleave needs identical shapes, got {a.shape} and {b.shape}")
    d = a.shape[-1]
    if d % group:
        raise ConfigError(f"channel count {d} not divisible by group size {group}")
    lead = a.shape[:-1]
    stacked = np.stack([a.data.reshape(*lead, d // group, group),
                        b.data.reshape(*lead, d // group, group)], axis=-2)
    out = stacked.reshape(*lead, 2 * d)

    def backward(g):
        g = g.reshape(*lead, d // group, 2, group)
        return g[..., 0, :].reshape(a.shape), g[..., 1, :].reshape(b.shape)
    return _make(out, (a, b), backward)


# ---- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (equal batch shapes)."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _make(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Last-axis affine map x @ w + b applied at every position."""
    d_in, d_out = w.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: input last axis {x.shape[-1]} != weight rows {d_in}")
    flat = x.data.reshape(-1, d_in)
    out = flat @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(*x.shape[:-1], d_out)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)
    return _make(out, parents, backward)


# ---- normalisation ---------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last (channel) axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    return _make(out, (x, gamma, beta), backward)


# ---- spatial ops (b, h, w, c) ---------------------------------------------

def _check_nhwc(x: Tensor, op: str):
    if x.ndim != 4:
        raise ShapeError(f"{op} expects (b, h, w, c), got {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with a (k, k, c_in, c_out) kernel."""
    _check_nhwc(x, "conv2d")
    k, k2, c_in, c_out = kernel.shape
    if k != k2:
        raise ShapeError(f"conv2d kernel must be square, got {kernel.shape}")
    if x.shape[3] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input axis 3 = {x.shape[3]}, kernel axis 2 = {c_in}")
    if pad < 0 or stride < 1:
        raise ConfigError(f"invalid conv2d stride={stride} pad={pad}")
    b, h, w, _ = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if (hp - k) % stride or (wp - k) % stride or hp < k or wp < k:
        raise ShapeError(f"conv2d: (h + 2*pad - k) = ({hp - k}, {wp - k}) not divisible by stride {stride}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data

    if k == 1:
        cols = xp[:, ::stride, ::stride, :]
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        # (b, ho, wo, c, kh, kw) -> (b, ho, wo, kh, kw, c)
        cols = win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3)
    cols2 = np.ascontiguousarray(cols).reshape(b * ho * wo, k * k * c_in)
    wmat = kernel.data.reshape(k * k * c_in, c_out)
    out = cols2 @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, ho, wo, c_out)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        gk = (cols2.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(b, ho, wo, k, k, c_in)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, pad:pad + h, pad:pad + w, :] if pad else gxp
        if bias is None:
            return gx, gk
        return gx, gk, (g2.sum(axis=0) if bias.requires_grad else None)
    return _make(out, parents, backward)


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     stride: int = 2) -> Tensor:
    """Transposed convolution with kernel size equal to stride (non-overlapping)."""
    _check_nhwc(x, "conv_transpose2d")
    k, k2, c_in, c_out = kernel.shape
    if k != stride or k2 != stride:
        raise ConfigError(f"conv_transpose2d requires kernel size == stride, got kernel {k}x{k2}, stride {stride}")
    if x.shape[3] != c_in:
        raise ShapeError(f"conv_transpose2d channel mismatch: input axis 3 = {x.shape[3]}, kernel axis 2 = {c_in}")
    b, h, w, _ = x.shape
    wmat = kernel.data.transpose(2, 0, 1, 3).reshape(c_in, k * k * c_out)
    flat = x.data.reshape(-1, c_in)
    out = (flat @ wmat).reshape(b, h, w, k, k, c_out).transpose(0, 1, 3, 2, 4, 5)
    out = out.reshape(b, h * k, w * k, c_out)
    if bias is not None:
        out = out + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gb = g.reshape(b, h, k, w, k, c_out).transpose(0, 1, 3, 2, 4, 5).reshape(b * h * w, k * k * c_out)
        gx = (gb @ wmat.T).reshape(x.shape) if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = (flat.T @ gb).reshape(c_in, k, k, c_out).transpose(1, 2, 0, 3)
        if bias is None:
            return gx, gk
        return gx, gk, (g.reshape(-1, c_out).sum(axis=0) if bias.requires_grad else None)
    return _make(out, parents, backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first max."""
    _check_nhwc(x, "max_pool2d")
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial extents, got {(h, w)}")
    blocks = x.data.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gblocks, idx[..., None], g[..., None], axis=-1)
        gx = gblocks.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape)
        return (gx,)
    return _make(out, (x,), backward)


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights, half-pixel centres, edge clamped."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _check_nhwc(x, "bilinear_resize")
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"bilinear_resize target must be >= 1, got {(out_h, out_w)}")
    b, h, w, c = x.shape
    if (h, w) == (out_h, out_w):
        return _make(x.data.copy(), (x,), lambda g: (g,))
    ry = interp_matrix(h, out_h, x.dtype)
    rx = interp_matrix(w, out_w, x.dtype)
    out = np.einsum("oh,bhwc->bowc", ry, x.data)
    out = np.einsum("pw,bowc->bopc", rx, out)

    def backward(g):
        gx = np.einsum("pw,bopc->bowc", rx, g)
        return (np.einsum("oh,bowc->bhwc", ry, gx),)
    return _make(out, (x,), backward)


# ---- composite ---------------------------------------------------------------

def attention(x: Tensor, heads: int, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
              bq: Tensor | None = None, bk: Tensor | None = None,
              bv: Tensor | None = None, bo: Tensor | None = None) -> Tensor:
    """Multi-head scaled dot-product self-attention over (b, t, d) tokens."""
    if x.ndim != 3:
        raise ShapeError(f"attention expects (b, t, d), got {x.shape}")
    b, t, d = x.shape
    if d % heads:
        raise ConfigError(f"attention: d={d} not divisible by heads={heads}")
    dh = d // heads

    def split(z):
        return transpose(reshape(z, (b, t, heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    ctx = matmul(softmax(scores, axis=-1), v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return linear(merged, wo, bo)


# ---- gradient checking ---------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-4) -> float:
    """Max relative error between backprop and central differences, in float64.

    ``f`` takes no arguments and must read ``params`` by reference.
    Error per entry is |analytic - numeric| / max(1, |numeric|).
    """
    params = list(params)
    originals = [p.data for p in params]
    flags = [p.requires_grad for p in params]
    try:
        with float64_mode():
            for p in params:
                p.data = p.data.astype(np.float64)
                p.grad = None
                p.requires_grad = True

            def evaluate() -> float:
                with no_grad():
                    val = f()
                v = val.item()
                if not np.isfinite(v):
                    raise NonFiniteError("grad_check: function value is not finite")
                return v

            out = f()
            if not np.isfinite(out.item()):
                raise NonFiniteError("grad_check: function value is not finite")
            out.backward()
            worst = 0.0
            for p in params:
                analytic = np.zeros_like(p.data) if p.grad is None else p.grad
                flat = p.data.reshape(-1)
                for i in range(flat.size):
                    keep = flat[i]
                    flat[i] = keep + step
                    up = evaluate()
                    flat[i] = keep - step
                    down = evaluate()
                    flat[i] = keep
                    numeric = (up - down) / (2 * step)
                    err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                    worst = max(worst, err)
            return worst
    finally:
        for p, orig, flag in zip(params, originals, flags):
            p.data = orig
            p.grad = None
            p.requires_grad = flag


# ---- serialisation -----------------------------------------------------------

def save_tensor(path, tensor: Tensor, name: str | None = None) -> None:
    """JSON header line {shape, name} followed by little-endian float32 bytes."""
    header = {"shape": list(tensor.shape), "name": name or tensor.name or ""}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_tensor(path) -> tuple[str, np.ndarray]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    shape = tuple(header["shape"])
    data = np.frombuffer(raw[nl + 1:], dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: payload has {data.size} floats, header shape {shape}")
    return header["name"], data.reshape(shape).astype(np.float32)
