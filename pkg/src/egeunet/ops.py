"""Neural-network primitives on :class:`~egeunet.tensor.Tensor`.

Convolutions are cross-correlations with zero padding. Dense kernels go
through an explicit tap stack and a batched matmul; depthwise kernels
accumulate one shifted slice per tap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, make_result

# Deliberate backward faults, switched on only by the gradient-check harness.
FAULTS: set[str] = set()


class GeometryError(ShapeError):
    """Raised when a kernel/stride/padding choice yields no output pixels."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        for field in ("kernel", "stride", "padding", "dilation"):
            object.__setattr__(self, field, _pair(getattr(self, field)))
        if self.in_channels <= 0 or self.out_channels <= 0 or self.groups <= 0:
            raise ValueError("channel counts and groups must be positive")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must both be divisible by groups={self.groups}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.dilation) < 1 or min(self.padding) < 0:
            raise GeometryError(f"invalid kernel geometry {self}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw), (dh, dw) = self.kernel, self.stride, self.padding, self.dilation
        ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
        wo = (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1
        if ho <= 0 or wo <= 0:
            raise GeometryError(f"input {h}x{w} gives empty output under {self}")
        return ho, wo


@dataclass(frozen=True)
class ResizeSpec:
    out_h: int
    out_w: int
    align_corners: bool = True
    mode: str = "bilinear"

    def __post_init__(self):
        if self.out_h < 1 or self.out_w < 1:
            raise ShapeError(f"resize target must be at least 1x1, got {self.out_h}x{self.out_w}")
        if self.mode != "bilinear":
            raise ValueError(f"unsupported resize mode {self.mode!r}")


# ------------------------------------------------------------------ convolution


def _tap_slices(spec: Conv2dSpec, ho: int, wo: int):
    (kh, kw), (sh, sw), (dh, dw) = spec.kernel, spec.stride, spec.dilation
    for i in range(kh):
        for j in range(kw):
            yield (slice(i * dh, i * dh + sh * (ho - 1) + 1, sh),
                   slice(j * dw, j * dw + sw * (wo - 1) + 1, sw))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: Conv2dSpec) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}")
    n, c, h, wd = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"input has {c} channels, conv expects {spec.in_channels}")
    if w.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {w.shape} does not match {spec.weight_shape}")
    if b is not None and not spec.has_bias:
        raise ShapeError("got a bias for a conv spec with has_bias=False")
    if b is not None and b.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {b.shape} does not match ({spec.out_channels},)")
    ho, wo = spec.output_size(h, wd)
    (ph, pw) = spec.padding
    g = spec.groups
    cg, og = c // g, spec.out_channels // g
    kk = spec.kernel[0] * spec.kernel[1]
    xd, wt = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    taps = list(_tap_slices(spec, ho, wo))
    pointwise = kk == 1 and spec.stride == (1, 1) and not (ph or pw)

    if cg == 1 and og == 1:
        # depthwise: one spatial filter per channel
        wk = wt.reshape(c, kk)
        out = np.zeros((n, c, ho, wo), dtype=xd.dtype)
        for k, (si, sj) in enumerate(taps):
            out += xp[:, :, si, sj] * wk[:, k][None, :, None, None]
        cols = None
    else:
        if pointwise:
            cols = xd.reshape(n, g, cg, h * wd)
        else:
            cols = np.stack([xp[:, :, si, sj] for si, sj in taps], axis=2)
            cols = cols.reshape(n, g, cg * kk, ho * wo)
        wm = wt.reshape(g, og, cg * kk)
        out = np.matmul(wm[None], cols).reshape(n, spec.out_channels, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(gout):
        gw = gb = gx = None
        if b is not None and b.requires_grad:
            gb = gout.sum(axis=(0, 2, 3))
        if cols is None:
            if w.requires_grad:
                gw = np.empty((c, kk), dtype=gout.dtype)
                for k, (si, sj) in enumerate(taps):
                    gw[:, k] = np.einsum("nchw,nchw->c", gout, xp[:, :, si, sj])
                gw = gw.reshape(wt.shape)
            if x.requires_grad:
                gxp = np.zeros(xp.shape, dtype=gout.dtype)
                for k, (si, sj) in enumerate(taps):
                    gxp[:, :, si, sj] += gout * wk[:, k][None, :, None, None]
                gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        else:
            gm = gout.reshape(n, g, og, ho * wo)
            if w.requires_grad:
                gw = np.matmul(gm, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(wt.shape)
            if x.requires_grad:
                gcols = np.matmul(wm.transpose(0, 2, 1)[None], gm)
                if pointwise:
                    gx = gcols.reshape(xd.shape)
                else:
                    gcols = gcols.reshape(n, c, kk, ho, wo)
                    gxp = np.zeros(xp.shape, dtype=gout.dtype)
                    for k, (si, sj) in enumerate(taps):
                        gxp[:, :, si, sj] += gcols[:, :, k]
                    gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        if gx is not None:
            gx = np.ascontiguousarray(gx)
        if gw is not None and "conv_weight_transpose" in FAULTS and gw.shape[-1] == gw.shape[-2]:
            gw = np.ascontiguousarray(gw.swapaxes(-1, -2))
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, bw, op="conv", spec=spec)


@dataclass(frozen=True)
class Conv1dSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    groups: int = 1
    has_bias: bool = True

    def as_2d(self) -> Conv2dSpec:
        return Conv2dSpec(self.in_channels, self.out_channels, (1, self.kernel), (1, self.stride),
                          (0, self.padding), (1, self.dilation), self.groups, self.has_bias)

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, spec: Conv1dSpec) -> Tensor:
    """1-D convolution over the last axis of an (N, C, L) tensor."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects (N, C, L) input, got shape {x.shape}")
    if w.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {w.shape} does not match {spec.weight_shape}")
    n, c, length = x.shape
    x4 = x.reshape(n, c, 1, length)
    w4 = w.reshape(spec.out_channels, spec.in_channels // spec.groups, 1, spec.kernel)
    y = conv2d(x4, w4, b, spec.as_2d())
    return y.reshape(n, spec.out_channels, y.shape[-1])


# ---------------------------------------------------------------------- resize


def interp_matrix(n_in: int, n_out: int, align_corners: bool = True, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of 1-D linear interpolation weights."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        if align_corners:
            src = i * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
        else:
            src = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        lo = min(int(math.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m.astype(dtype)


def bilinear_resize(x: Tensor, spec: ResizeSpec) -> Tensor:
    """Resize the two trailing axes of ``x`` by separable linear interpolation."""
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize needs at least 2 dims, got shape {x.shape}")
    h, w = x.shape[-2:]
    dt = x.dtype
    same_h = h == spec.out_h and spec.align_corners
    same_w = w == spec.out_w and spec.align_corners
    rh = None if same_h else interp_matrix(h, spec.out_h, spec.align_corners, dt)
    rw = None if same_w else interp_matrix(w, spec.out_w, spec.align_corners, dt)
    out = x.data
    if rw is not None:
        out = out @ rw.T
    if rh is not None:
        out = np.matmul(rh, out)
    if out is x.data:
        out = out.copy()

    def bw(g):
        if rh is not None:
            g = np.matmul(rh.T, g)
        if rw is not None:
            g = g @ rw
        return (np.ascontiguousarray(g),)

    return make_result(np.ascontiguousarray(out), (x,), bw, op="resize")


def resize_to(x: Tensor, size: tuple[int, int], align_corners: bool = True) -> Tensor:
    return bilinear_resize(x, ResizeSpec(size[0], size[1], align_corners))


# ----------------------------------------------------------------- max pooling


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    if k != 2 or stride != 2:
        raise NotImplementedError("only 2x2 pooling with stride 2 is supported")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)

    return make_result(np.ascontiguousarray(out), (x,), bw, op="maxpool")


# ---------------------------------------------------------------- activations

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * (xd * xd * xd))
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result(out, (x,), bw, op="gelu")


def stable_sigmoid(a: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), op="sigmoid")


# --------------------------------------------------------------- normalization

NORM_EPS = 1e-6


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize across axis 1 at every (n, h, w) position, then scale and shift per channel."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gm = gamma.data.reshape(bshape)
    out = xhat * gm + beta.data.reshape(bshape)

    def bw(g):
        red = (0,) + tuple(range(2, x.ndim))
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gm
            gx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), bw, op="norm")


