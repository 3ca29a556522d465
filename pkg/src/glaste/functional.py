"""Neural-network primitives built on :mod:`glaste.tensor`.

All image tensors are NCHW.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    Concat,
    ContractError,
    DimensionError,
    Function,
    Tensor,
    concat,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)

__all__ = [
    "conv2d",
    "linear",
    "upsample_nearest",
    "avgpool2d",
    "instance_stats",
    "concat_channels",
    "log_softmax",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
]


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


class Conv2d(Function):
    """Cross-correlation via channels-last im2col; the input gradient is scattered back per kernel tap."""

    def forward(self, x, w, b, stride, pad):
        n, c, h, wd = x.shape
        k, cw, kh, kw = w.shape
        if c != cw:
            raise DimensionError(f"conv2d: input has {c} channels, weight expects {cw}")
        sh, sw = stride
        ph, pw = pad
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (wd + 2 * pw - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
        xh = x.transpose(0, 2, 3, 1)
        if ph or pw:
            xh = np.pad(xh, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        win = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]  # n,ho,wo,c,kh,kw
        # (kh, kw, c) ordering keeps the innermost copy contiguous
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
        wmat = w.transpose(0, 2, 3, 1).reshape(k, -1)
        out = cols @ wmat.T + b
        self.meta = (x.shape, xh.shape, w.shape, ho, wo, stride, pad)
        self.cols = cols if self.needs_grad(1) else None
        self.wmat = wmat
        return out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)

    def backward(self, g):
        xshape, xhshape, wshape, ho, wo, (sh, sw), (ph, pw) = self.meta
        n, c, h, wd = xshape
        k, _, kh, kw = wshape
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, k)
        gw = None
        if self.cols is not None:
            gw = (g2.T @ self.cols).reshape(k, kh, kw, c).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if self.needs_grad(2) else None
        gx = None
        if self.needs_grad(0):
            taps = self.wmat.reshape(k, kh * kw, c)
            dxh = np.zeros(xhshape, dtype=g.dtype)
            for t in range(kh * kw):
                i, j = divmod(t, kw)
                dxh[:, i : i + sh * ho : sh, j : j + sw * wo : sw, :] += (g2 @ taps[:, t, :]).reshape(n, ho, wo, c)
            gx = dxh[:, ph : ph + h, pw : pw + wd, :].transpose(0, 3, 1, 2)
        return gx, gw, gb


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """2-D cross-correlation of ``x`` [N,C,H,W] with ``weight`` [K,C,kh,kw]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D operands, got {x.shape} and {weight.shape}")
    stride, pad = _pair(stride), _pair(pad)
    if min(stride) < 1 or min(pad) < 0:
        raise ContractError("conv2d: stride must be >= 1 and pad >= 0")
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0], dtype=weight.dtype))
    return Conv2d.apply(x, weight, bias, stride=stride, pad=pad)


class Linear(Function):
    def forward(self, x, w, b):
        if x.shape[-1] != w.shape[1]:
            raise DimensionError(f"linear: input extent {x.shape[-1]} != weight extent {w.shape[1]}")
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, g):
        gx = g @ self.w if self.needs_grad(0) else None
        gw = g.T @ self.x if self.needs_grad(1) else None
        gb = g.sum(axis=0) if self.needs_grad(2) else None
        return gx, gw, gb


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x [N,D], weight [O,D]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"linear expects 2-D operands, got {x.shape} and {weight.shape}")
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0], dtype=weight.dtype))
    return Linear.apply(x, weight, bias)


class UpsampleNearest(Function):
    def forward(self, x, factor):
        self.f = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, g):
        n, c, h, w = g.shape
        f = self.f
        return (g.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    return UpsampleNearest.apply(x, factor=factor)


class AvgPool2d(Function):
    def forward(self, x, k):
        n, c, h, w = x.shape
        if h % k or w % k:
            raise DimensionError(f"avgpool2d: extents {h}x{w} not divisible by {k}")
        self.k = k
        return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(self, g):
        k = self.k
        return (g.repeat(k, axis=2).repeat(k, axis=3) / (k * k),)


def avgpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping average pooling (stride equals kernel)."""
    return AvgPool2d.apply(x, k=kernel)


def instance_stats(x: Tensor) -> tuple[Tensor, Tensor]:
    """Per-sample, per-channel mean and population std over H x W, each [N,C]."""
    if x.ndim != 4:
        raise DimensionError(f"instance_stats expects NCHW, got {x.shape}")
    if x.shape[2] * x.shape[3] == 0:
        raise ContractError("instance_stats: empty spatial extent")
    mean = x.mean(axis=(2, 3))
    centered = x - mean.reshape(x.shape[0], x.shape[1], 1, 1)
    var = (centered * centered).mean(axis=(2, 3))
    return mean, var.sqrt()


def concat_channels(*xs: Tensor) -> Tensor:
    if len({(x.shape[0],) + x.shape[2:] for x in xs}) != 1:
        raise DimensionError(f"concat_channels: incompatible shapes {[x.shape for x in xs]}")
    return concat(xs, axis=1)


class LogSoftmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        self.softmax = np.exp(out)
        return out

    def backward(self, g):
        return (g - self.softmax * g.sum(axis=self.axis, keepdims=True),)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)
