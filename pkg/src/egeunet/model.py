"""The six-stage encoder/decoder network with GAB bridges and deep supervision.

Layout for a 256x256 input (channels 8..64)::

    stage      1     2     3     4*    5*    6*        (* = GHPA block)
    computes   256   128   64    32    16    8
    skip       128   64    32    16    8     8  (after 2x2 max pooling)

The decoder walks back from stage 6. At stage s it reduces the deeper
feature's channels with its block, upsamples to the stage-s skip size, predicts
an auxiliary mask there, feeds the sigmoid of that mask to GAB_s and adds the
GAB output. The final head works on the stage-1 decoder feature and is
upsampled to the input size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .gab import GAB, GabConfig
from .ghpa import GHPA, GhpaConfig
from .nn import DW_STYLES, Module, conv1x1, conv3x3
from .tensor import ShapeError, Tensor

DEFAULT_CHANNELS = (8, 16, 24, 32, 48, 64)


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, ...] = field(default=DEFAULT_CHANNELS)
    input_channels: int = 3
    input_size: int = 256
    dw_style: str = "separable"
    multi_axis: bool = True
    dw_on_p: bool = True
    use_mask: bool = True
    use_dilation: bool = True
    gab_group_conv: str = "separable"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        ch = self.channels
        if len(ch) != 6:
            raise ValueError(f"expected 6 stage channel counts, got {len(ch)}")
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise ValueError(f"stage channels must be strictly increasing, got {ch}")
        if any(c % 4 for c in ch):
            raise ValueError(f"stage channels must be divisible by 4, got {ch}")
        if self.input_size % 32:
            raise ValueError(f"input_size must be divisible by 32, got {self.input_size}")
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")
        if self.dw_style not in DW_STYLES:
            raise ValueError(f"dw_style must be one of {DW_STYLES}, got {self.dw_style!r}")

    def ghpa(self, dim_in: int, dim_out: int) -> GhpaConfig:
        return GhpaConfig(dim_in, dim_out, multi_axis=self.multi_axis, dw_on_p=self.dw_on_p, dw_style=self.dw_style)

    def gab(self, c_low: int, c_high: int) -> GabConfig:
        return GabConfig(c_low, c_high, use_mask=self.use_mask, use_dilation=self.use_dilation,
                         group_conv=self.gab_group_conv)

    def to_dict(self) -> dict:
        return asdict(self)


class EGEUNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        cins = (cfg.input_channels,) + ch[:-1]
        self.encoder = [
            conv3x3(cins[i], ch[i], rng, dtype) if i < 3 else GHPA(cfg.ghpa(cins[i], ch[i]), rng, dtype)
            for i in range(6)
        ]
        # decoder[i] maps stage i+1 channels down to stage i
        self.decoder = [
            conv3x3(ch[i + 1], ch[i], rng, dtype) if i < 2 else GHPA(cfg.ghpa(ch[i + 1], ch[i]), rng, dtype)
            for i in range(5)
        ]
        self.bridges = [GAB(cfg.gab(ch[i], ch[i + 1]), rng, dtype) for i in range(5)]
        self.aux_heads = [conv1x1(ch[i], 1, rng, dtype) for i in range(5)]
        self.final_head = conv1x1(ch[0], 1, rng, dtype)
        self.assign_names()

    def forward(self, image: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Return ``(final_logits, aux_logits)``; aux runs shallowest to deepest."""
        if image.ndim != 4 or image.shape[1] != self.cfg.input_channels:
            raise ShapeError(f"expected (N, {self.cfg.input_channels}, H, W) input, got {image.shape}")
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"spatial dims must be divisible by 32, got {h}x{w}")
        skips = []
        x = image
        for i, block in enumerate(self.encoder):
            x = ops.gelu(block(x))
            if i < 5:
                x = ops.maxpool2d(x)
            skips.append(x)
        aux: list[Tensor] = [None] * 5
        for i in range(4, -1, -1):
            low = skips[i]
            b = ops.gelu(self.decoder[i](x))
            if b.shape[-2:] != low.shape[-2:]:
                b = ops.resize_to(b, low.shape[-2:])
            aux[i] = self.aux_heads[i](b)
            g = self.bridges[i](low, x, ops.sigmoid(aux[i]))
            x = b + g
        final = ops.resize_to(self.final_head(x), (h, w))
        return final, aux


def build(cfg: ModelConfig | None = None, rng: np.random.Generator | None = None, dtype=np.float32) -> EGEUNet:
    cfg = cfg or ModelConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return EGEUNet(cfg, rng, dtype)


def forward(model: EGEUNet, image) -> tuple[Tensor, list[Tensor]]:
    if not isinstance(image, Tensor):
        image = Tensor(np.asarray(image, dtype=model.parameters()[0].dtype))
    return model(image)
