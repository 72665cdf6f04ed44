"""Differentiable operations and their backward rules."""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractError, DimensionError, Tensor, as_tensor, register


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes that broadcasting expanded to reach ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return a, b


# -- elementwise arithmetic ----------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._from_op(a.data + b.data, "add", (a, b), (a.shape, b.shape))


@register("add")
def _add_grad(ctx, g):
    sa, sb = ctx
    return unbroadcast(g, sa), unbroadcast(g, sb)


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._from_op(a.data - b.data, "sub", (a, b), (a.shape, b.shape))


@register("sub")
def _sub_grad(ctx, g):
    sa, sb = ctx
    return unbroadcast(g, sa), unbroadcast(-g, sb)


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._from_op(a.data * b.data, "mul", (a, b), (a.data, b.data))


@register("mul")
def _mul_grad(ctx, g):
    x, y = ctx
    return unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._from_op(a.data / b.data, "div", (a, b), (a.data, b.data))


@register("div")
def _div_grad(ctx, g):
    x, y = ctx
    return unbroadcast(g / y, x.shape), unbroadcast(-g * x / (y * y), y.shape)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, "neg", (a,))


@register("neg")
def _neg_grad(ctx, g):
    return (-g,)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, "exp", (a,), out)


@register("exp")
def _exp_grad(ctx, g):
    return (g * ctx,)


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), "log", (a,), a.data)


@register("log")
def _log_grad(ctx, g):
    return (g / ctx,)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor._from_op(s, "sigmoid", (a,), s)


@register("sigmoid")
def _sigmoid_grad(ctx, g):
    return (g * ctx * (1.0 - ctx),)


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return Tensor._from_op(a.data * s, "silu", (a,), (a.data, s))


@register("silu")
def _silu_grad(ctx, g):
    x, s = ctx
    return (g * s * (1.0 + x * (1.0 - s)),)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return Tensor._from_op(out, "softplus", (a,), x)


@register("softplus")
def _softplus_grad(ctx, g):
    return (g * _sigmoid(ctx),)


def expm1_ratio(a: Tensor, tol: float = 1e-6) -> Tensor:
    """(exp(z) - 1) / z elementwise, with the series 1 + z/2 for |z| < tol."""
    z = a.data
    small = np.abs(z) < tol
    safe = np.where(small, 1.0, z)
    out = np.where(small, 1.0 + z / 2.0, np.expm1(safe) / safe)
    return Tensor._from_op(out.astype(z.dtype, copy=False), "expm1_ratio", (a,), z)


@register("expm1_ratio")
def _expm1_ratio_grad(ctx, g):
    z = ctx
    # d/dz (e^z - 1)/z = (e^z (z - 1) + 1) / z^2; cancels badly near 0
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    exact = (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe)
    series = 0.5 + z / 3.0 + z * z / 8.0
    return (g * np.where(small, series, exact).astype(z.dtype, copy=False),)


# -- reductions ------------------------------------------------------------


def _norm_axis(axis: Any, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return Tensor._from_op(np.asarray(out), "sum", (a,), (a.shape, axes, keepdims))


@register("sum")
def _sum_grad(ctx, g):
    shape, axes, keepdims = ctx
    if not keepdims:
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g, shape).copy(),)


def mean(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return Tensor._from_op(np.asarray(out), "mean", (a,), (a.shape, axes, keepdims, count))


@register("mean")
def _mean_grad(ctx, g):
    shape, axes, keepdims, count = ctx
    if not keepdims:
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g / count, shape).copy(),)


def mean_pool(a: Tensor, axis: int) -> Tensor:
    return mean(a, axis=axis)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast like ``numpy.matmul``."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands need at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), (a.data, b.data))


@register("matmul")
def _matmul_grad(ctx, g):
    x, y = ctx
    gx = g @ np.swapaxes(y, -1, -2)
    gy = np.swapaxes(x, -1, -2) @ g
    return unbroadcast(gx, x.shape), unbroadcast(gy, y.shape)


# -- layout ----------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape)) if -1 not in shape else a.size
    if n != a.size:
        raise DimensionError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")
    return Tensor._from_op(a.data.reshape(shape), "reshape", (a,), a.shape)


@register("reshape")
def _reshape_grad(ctx, g):
    return (g.reshape(ctx),)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    return Tensor._from_op(np.transpose(a.data, axes), "transpose", (a,), axes)


@register("transpose")
def _transpose_grad(ctx, g):
    return (np.transpose(g, np.argsort(ctx)),)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def pad_end(a: Tensor, n: int, axis: int = 0) -> Tensor:
    """Append ``n`` zeros along ``axis``."""
    if n < 0:
        raise ContractError("pad_end needs a non-negative count")
    axis %= a.ndim
    if n == 0:
        return Tensor._from_op(a.data.copy(), "pad_end", (a,), (axis, a.shape[axis]))
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, n)
    return Tensor._from_op(np.pad(a.data, widths), "pad_end", (a,), (axis, a.shape[axis]))


@register("pad_end")
def _pad_end_grad(ctx, g):
    axis, keep = ctx
    return (np.take(g, np.arange(keep), axis=axis),)


def getitem(a: Tensor, key: Any) -> Tensor:
    return Tensor._from_op(a.data[key], "getitem", (a,), (a.shape, a.dtype, key))


@register("getitem")
def _getitem_grad(ctx, g):
    shape, dtype, key = ctx
    out = np.zeros(shape, dtype=dtype)
    np.add.at(out, key, g)
    return (out,)


def take(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    axis %= a.ndim
    return Tensor._from_op(np.take(a.data, idx, axis=axis), "take", (a,), (a.shape, idx, axis))


@register("take")
def _take_grad(ctx, g):
    shape, idx, axis = ctx
    out = np.zeros(shape, dtype=g.dtype)
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, idx, np.moveaxis(g, axis, 0))
    return (out,)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    axis %= parts[0].ndim
    sizes = [p.shape[axis] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    return Tensor._from_op(data, "concat", tuple(parts), (axis, sizes))


@register("concat")
def _concat_grad(ctx, g):
    axis, sizes = ctx
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts], axis=axis)


# -- softmax family --------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)
    return Tensor._from_op(s, "softmax", (a,), (s, axis))


softmax_axis = softmax


@register("softmax")
def _softmax_grad(ctx, g):
    s, axis = ctx
    return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    return Tensor._from_op(out, "log_softmax", (a,), (out, axis))


@register("log_softmax")
def _log_softmax_grad(ctx, g):
    out, axis = ctx
    return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


# -- convolution -----------------------------------------------------------


def conv2d_same(x: Tensor, kernel: Tensor) -> Tensor:
    """Zero-padded 'same' 2-D correlation.

    ``x`` is (..., H, W, C) and ``kernel`` is (kh, kw, C, C'); any leading
    axes of ``x`` are batch axes. Output is (..., H, W, C').
    """
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be (kh, kw, C, C'), got {kernel.shape}")
    kh, kw, cin, _ = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d_same needs odd kernel extents, got {kh}x{kw}")
    if x.ndim < 3 or x.shape[-1] != cin:
        raise DimensionError(f"input {x.shape} does not match kernel channels {cin}")
    batch = x.shape[:-3]
    h, w = x.shape[-3], x.shape[-2]
    xb = x.data.reshape((-1, h, w, cin))
    ph, pw = kh // 2, kw // 2
    padded = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    # windows: (B, H, W, C, kh, kw)
    win = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    out = np.einsum("bhwcij,ijco->bhwo", win, kernel.data, optimize=True)
    out = out.reshape(batch + (h, w, kernel.shape[3]))
    return Tensor._from_op(out, "conv2d_same", (x, kernel), (win, kernel.data, x.shape, padded.shape))


@register("conv2d_same")
def _conv2d_same_grad(ctx, g):
    win, k, xshape, pshape = ctx
    kh, kw = k.shape[0], k.shape[1]
    h, w = xshape[-3], xshape[-2]
    gb = g.reshape((-1, h, w, k.shape[3]))
    gk = np.einsum("bhwcij,bhwo->ijco", win, gb, optimize=True)
    gp = np.zeros(pshape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gp[:, i:i + h, j:j + w, :] += gb @ k[i, j].T
    ph, pw = kh // 2, kw // 2
    gx = gp[:, ph:ph + h, pw:pw + w, :].reshape(xshape)
    return gx, gk


# -- losses ----------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    y = np.asarray(labels, dtype=np.intp)
    logp = log_softmax(logits, axis=-1)
    picked = getitem(logp, (np.arange(len(y)), y))
    return neg(mean(picked))


__all__ = [
    "add", "sub", "mul", "div", "neg", "exp", "log", "sigmoid", "silu", "softplus",
    "expm1_ratio", "sum", "mean", "mean_pool", "matmul", "reshape", "transpose",
    "swapaxes", "pad_end", "getitem", "take", "concat", "stack", "softmax",
    "softmax_axis", "log_softmax", "conv2d_same", "cross_entropy", "unbroadcast",
    "as_tensor",
]
