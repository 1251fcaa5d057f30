"""Group aggregation bridge (GAB).

Fuses low-level encoder features, higher-level decoder features and a
probability mask. Both feature maps are split into four channel groups; group g
of each, plus the mask, goes through a k=3 conv with dilation ``rates[g]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .nn import DW, Conv2d, Module, conv1x1
from .ops import Conv2dSpec
from .tensor import ShapeError, Tensor, chunk_channels, concat_channels

DEFAULT_RATES = (1, 2, 5, 7)
GROUP_CONVS = ("separable", "dense")


@dataclass(frozen=True)
class GabConfig:
    c_low: int
    c_high: int
    dilation_rates: tuple[int, ...] = field(default=DEFAULT_RATES)
    use_mask: bool = True
    use_dilation: bool = True
    group_conv: str = "separable"

    def __post_init__(self):
        if self.c_low % 4 or self.c_high % 4:
            raise ValueError(f"c_low={self.c_low} and c_high={self.c_high} must be divisible by 4")
        if len(self.dilation_rates) != 4:
            raise ValueError("GAB needs exactly four dilation rates")
        if self.group_conv not in GROUP_CONVS:
            raise ValueError(f"group_conv must be one of {GROUP_CONVS}, got {self.group_conv!r}")

    @property
    def rates(self) -> tuple[int, ...]:
        return tuple(self.dilation_rates) if self.use_dilation else (1, 1, 1, 1)

    @property
    def group_in(self) -> int:
        return self.c_low // 2 + (1 if self.use_mask else 0)

    @property
    def group_out(self) -> int:
        return self.c_low // 4


class GroupConv(Module):
    """k=3 conv with pad == dilation, so spatial size is preserved.

    ``dense`` is one full conv; ``separable`` factors it into a dilated
    depthwise conv followed by a pointwise conv.
    """

    def __init__(self, cin: int, cout: int, dilation: int, kind: str, rng, dtype=np.float32):
        super().__init__()
        self.kind = kind
        self.dilation = dilation
        if kind == "dense":
            self.conv = Conv2d(Conv2dSpec(cin, cout, 3, 1, dilation, dilation), rng, dtype)
        else:
            self.depthwise = Conv2d(Conv2dSpec(cin, cin, 3, 1, dilation, dilation, cin), rng, dtype)
            self.pointwise = conv1x1(cin, cout, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "dense":
            return self.conv(x)
        return self.pointwise(self.depthwise(x))


class GAB(Module):
    def __init__(self, cfg: GabConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.high_dw = DW(cfg.c_high, cfg.c_low, rng, "separable", dtype=dtype)
        self.groups = [GroupConv(cfg.group_in, cfg.group_out, r, cfg.group_conv, rng, dtype) for r in cfg.rates]
        self.fuse = conv1x1(cfg.c_low, cfg.c_low, rng, dtype)

    def pre_fusion(self, low: Tensor, high: Tensor, mask: Tensor | None) -> list[Tensor]:
        cfg = self.cfg
        if low.ndim != 4 or low.shape[1] != cfg.c_low:
            raise ShapeError(f"low-level input must be (N, {cfg.c_low}, H, W), got {low.shape}")
        if high.ndim != 4 or high.shape[1] != cfg.c_high or high.shape[0] != low.shape[0]:
            raise ShapeError(f"high-level input must be ({low.shape[0]}, {cfg.c_high}, h, w), got {high.shape}")
        size = low.shape[-2:]
        h = ops.resize_to(self.high_dw(high), size)
        lows = chunk_channels(low, 4)
        highs = chunk_channels(h, 4)
        extra = []
        if cfg.use_mask:
            if mask is None:
                raise ShapeError("this GAB is configured with use_mask=True but got no mask")
            if mask.ndim != 4 or mask.shape[1] != 1 or mask.shape[0] != low.shape[0]:
                raise ShapeError(f"mask must be ({low.shape[0]}, 1, h, w), got {mask.shape}")
            extra = [ops.resize_to(mask, size)]
        return [conv(concat_channels([lo, hi, *extra])) for conv, lo, hi in zip(self.groups, lows, highs)]

    def forward(self, low: Tensor, high: Tensor, mask: Tensor | None = None) -> Tensor:
        y = concat_channels(self.pre_fusion(low, high, mask))
        return self.fuse(ops.gelu(y))


def gab_forward(low: Tensor, high: Tensor, mask: Tensor | None, module: GAB) -> Tensor:
    return module(low, high, mask)


def gab_params(cfg: GabConfig) -> int:
    """Closed-form parameter count of a GAB built from ``cfg``."""
    ch, cl = cfg.c_high, cfg.c_low
    total = ch * 9 + ch + ch * cl + cl  # high-level DW
    m, q = cfg.group_in, cfg.group_out
    if cfg.group_conv == "dense":
        per_group = m * q * 9 + q
    else:
        per_group = m * 9 + m + m * q + q
    total += 4 * per_group
    total += cl * cl + cl
    return total
