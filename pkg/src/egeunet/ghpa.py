"""Group multi-axis Hadamard product attention (GHPA).

The input is normalized and split into four channel groups. Three groups are
multiplied elementwise by a learnable tensor resized to the group's
height-width, channel-height or channel-width plane; the fourth only passes
through a DW block. The groups are concatenated, normalized again and mixed by
a final DW block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import DW, ChannelNorm, Module
from .tensor import ParamTensor, ShapeError, Tensor, concat_channels, chunk_channels, hadamard, permute, reshape

AXES = ("height-width", "channel-height", "channel-width")

# x (N, c, H, W) -> layout with the attended pair trailing, and back
_TO_TRAILING = {"height-width": None, "channel-height": (0, 3, 1, 2), "channel-width": (0, 2, 1, 3)}
_FROM_TRAILING = {"height-width": None, "channel-height": (0, 2, 3, 1), "channel-width": (0, 2, 1, 3)}


@dataclass(frozen=True)
class GhpaConfig:
    dim_in: int
    dim_out: int
    p_base: tuple[int, int] = (8, 8)
    groups: int = 4
    multi_axis: bool = True
    dw_on_p: bool = True
    dw_style: str = "separable"
    residual: bool = False

    def __post_init__(self):
        if self.groups != 4:
            raise ValueError("GHPA uses exactly 4 groups")
        if self.dim_in % 4:
            raise ValueError(f"dim_in={self.dim_in} must be divisible by 4")
        if self.residual and self.dim_in != self.dim_out:
            raise ValueError("residual GHPA needs dim_in == dim_out")

    @property
    def group_axes(self) -> tuple[str | None, ...]:
        """Attended axes per group; None marks the DW-only group."""
        if self.multi_axis:
            return ("height-width", "channel-height", "channel-width", None)
        return ("height-width",) * 4


class HpaBranch(Module):
    """A learnable tensor ``p`` plus the DW block applied after resizing it.

    ``p`` is stored at base resolution: (c, 8, 8) for height-width and (c, 8)
    for the channel-paired axes, where the channel axis is never resized.
    """

    def __init__(self, channels: int, axes: str, rng: np.random.Generator, p_base=(8, 8),
                 dw_on_p: bool = True, dw_style: str = "separable", dtype=np.float32):
        super().__init__()
        if axes not in AXES:
            raise ValueError(f"axes must be one of {AXES}, got {axes!r}")
        self.axes = axes
        self.channels = channels
        if axes == "height-width":
            shape = (channels, *p_base)
        else:
            shape = (channels, p_base[0] if axes == "channel-height" else p_base[1])
        self.p = ParamTensor(rng.uniform(0.8, 1.2, size=shape).astype(dtype), "p")
        self.dw = DW(channels, channels, rng, dw_style, one_d=axes != "height-width", dtype=dtype) if dw_on_p else None

    def resized_p(self, size: tuple[int, ...]) -> Tensor:
        """Return p resized to the trailing ``size`` of the input, with DW applied."""
        c = self.channels
        if self.axes == "height-width":
            q = reshape(self.p, (1, c) + self.p.shape[1:])
            q = ops.resize_to(q, size)
        else:
            length = size[-1]
            q = reshape(self.p, (1, c, 1, self.p.shape[-1]))
            q = ops.resize_to(q, (1, length))
            q = reshape(q, (1, c, length))
        if self.dw is not None:
            q = self.dw(q)
        return q

    def forward(self, x: Tensor) -> Tensor:
        """Apply HPA to a group with layout (N, c, H, W)."""
        order = _TO_TRAILING[self.axes]
        xt = x if order is None else permute(x, order)
        out = hpa(xt, self)
        back = _FROM_TRAILING[self.axes]
        return out if back is None else permute(out, back)


def hpa(x: Tensor, branch: HpaBranch) -> Tensor:
    """x times DW(resize(p)), with the branch's attended axes trailing in ``x``."""
    if branch.axes == "height-width":
        if x.shape[-3] != branch.channels:
            raise ShapeError(f"p has {branch.channels} channels, input group has {x.shape[-3]}")
        size = x.shape[-2:]
    else:
        if x.shape[-2] != branch.channels:
            raise ShapeError(f"p has {branch.channels} channels, input group has {x.shape[-2]}")
        size = x.shape[-1:]
    return hadamard(x, branch.resized_p(size))


class GHPA(Module):
    def __init__(self, cfg: GhpaConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c = cfg.dim_in // 4
        self.norm_in = ChannelNorm(cfg.dim_in, dtype)
        branches = []
        for axes in cfg.group_axes:
            if axes is None:
                branches.append(DW(c, c, rng, cfg.dw_style, dtype=dtype))
            else:
                branches.append(HpaBranch(c, axes, rng, cfg.p_base, cfg.dw_on_p, cfg.dw_style, dtype))
        self.branches = branches
        self.norm_mid = ChannelNorm(cfg.dim_in, dtype)
        self.fuse = DW(cfg.dim_in, cfg.dim_out, rng, "separable", dtype=dtype)

    def pre_fusion(self, xn: Tensor) -> list[Tensor]:
        """Per-group outputs for an already normalized input (before concat)."""
        return [branch(part) for branch, part in zip(self.branches, chunk_channels(xn, 4))]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.dim_in:
            raise ShapeError(f"GHPA expects (N, {self.cfg.dim_in}, H, W), got {x.shape}")
        y = concat_channels(self.pre_fusion(self.norm_in(x)))
        y = self.fuse(self.norm_mid(y))
        if self.cfg.residual:
            y = y + x
        return y


def ghpa_forward(x: Tensor, module: GHPA) -> Tensor:
    return module(x)


# ------------------------------------------------------------------- cost model


def _dw_macs(cin: int, cout: int, elems: int, style: str, one_d: bool) -> int:
    taps = 3 if one_d else 9
    macs = elems * cin * taps
    if style == "separable" or cin != cout:
        macs += elems * cin + elems * cin * cout  # GELU + pointwise
    return macs


def ghpa_complexity(cfg: GhpaConfig, input_shape: tuple[int, int, int, int]) -> int:
    """Closed-form MAC count of one GHPA forward pass.

    Uses the same conventions as :mod:`egeunet.analysis`: conv MACs, one per
    elementwise product/activation, four per resized output, five per
    normalized element. Every term is linear in N*C*H*W except the resize
    and DW work on ``p``, which is linear in H*W (or H, W) alone.
    """
    n, cin, h, w = input_shape
    if cin != cfg.dim_in:
        raise ShapeError(f"input has {cin} channels, config expects {cfg.dim_in}")
    c = cin // 4
    total = 5 * n * cin * h * w  # entry norm
    for axes in cfg.group_axes:
        if axes is None:
            total += _dw_macs(c, c, n * h * w, cfg.dw_style, False)
            continue
        if axes == "height-width":
            plane = h * w
            total += 4 * c * plane
            if cfg.dw_on_p:
                total += _dw_macs(c, c, plane, cfg.dw_style, False)
        else:
            length = h if axes == "channel-height" else w
            total += 4 * c * length
            if cfg.dw_on_p:
                total += _dw_macs(c, c, length, cfg.dw_style, True)
        total += n * c * h * w  # hadamard
    total += 5 * n * cin * h * w  # mid norm
    total += _dw_macs(cin, cfg.dim_out, n * h * w, "separable", False)
    if cfg.residual:
        total += n * cin * h * w
    return total


def hadamard_macs(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape))
