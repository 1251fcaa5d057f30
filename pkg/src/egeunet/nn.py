"""Layer containers holding named :class:`ParamTensor` objects."""

from __future__ import annotations

import contextlib
import math
from typing import Iterator

import numpy as np

from . import ops
from .ops import Conv1dSpec, Conv2dSpec
from .tensor import ParamTensor, Tensor

_SCOPE: list[str] = []


def current_scope() -> str:
    return _SCOPE[-1] if _SCOPE else ""


@contextlib.contextmanager
def name_scope(name: str):
    _SCOPE.append(name)
    try:
        yield
    finally:
        _SCOPE.pop()


class Module:
    """Registers child modules and parameters assigned as attributes, in order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "path", "")

    def __setattr__(self, key, value):
        if isinstance(value, ParamTensor):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{key}.{i}"] = v
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, ParamTensor]]:
        for k, p in self._params.items():
            yield prefix + k, p
        for k, child in self._children.items():
            yield from child.named_parameters(prefix + k + ".")

    def parameters(self) -> list[ParamTensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for k, child in self._children.items():
            yield from child.modules(prefix + k + ".")

    def assign_names(self) -> None:
        """Stamp dotted paths onto every submodule and parameter."""
        for path, mod in self.modules():
            object.__setattr__(mod, "path", path)
        for name, p in self.named_parameters():
            p.name = name

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        with name_scope(self.path or type(self).__name__):
            return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, spec: Conv2dSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel[0] * spec.kernel[1]
        self.weight = ParamTensor(kaiming_uniform(rng, spec.weight_shape, fan_in, dtype), "weight")
        if spec.has_bias:
            self.bias = ParamTensor(np.zeros(spec.out_channels, dtype=dtype), "bias")
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class Conv1d(Module):
    def __init__(self, spec: Conv1dSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel
        self.weight = ParamTensor(kaiming_uniform(rng, spec.weight_shape, fan_in, dtype), "weight")
        if spec.has_bias:
            self.bias = ParamTensor(np.zeros(spec.out_channels, dtype=dtype), "bias")
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.spec)


def conv3x3(cin: int, cout: int, rng, dtype=np.float32, dilation: int = 1) -> Conv2d:
    return Conv2d(Conv2dSpec(cin, cout, 3, 1, dilation, dilation), rng, dtype)


def conv1x1(cin: int, cout: int, rng, dtype=np.float32) -> Conv2d:
    return Conv2d(Conv2dSpec(cin, cout, 1), rng, dtype)


class ChannelNorm(Module):
    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.gamma = ParamTensor(np.ones(channels, dtype=dtype), "gamma")
        self.beta = ParamTensor(np.zeros(channels, dtype=dtype), "beta")

    def forward(self, x: Tensor) -> Tensor:
        return ops.channel_norm(x, self.gamma, self.beta)


DW_STYLES = ("separable", "depthwise_only")


class DW(Module):
    """Depthwise k=3 conv, then GELU and a pointwise conv.

    With ``style="depthwise_only"`` and equal channel counts the pointwise half
    is dropped. A channel change always keeps it. ``one_d`` switches to 1-D
    kernels over the last axis of an (N, C, L) tensor.
    """

    def __init__(self, cin: int, cout: int, rng, style: str = "separable", one_d: bool = False,
                 dilation: int = 1, activation: bool = True, dtype=np.float32):
        super().__init__()
        if style not in DW_STYLES:
            raise ValueError(f"dw_style must be one of {DW_STYLES}, got {style!r}")
        self.one_d = one_d
        self.activation = activation
        if one_d:
            self.depthwise = Conv1d(Conv1dSpec(cin, cin, 3, 1, dilation, dilation, cin), rng, dtype)
        else:
            self.depthwise = Conv2d(Conv2dSpec(cin, cin, 3, 1, dilation, dilation, cin), rng, dtype)
        if style == "separable" or cin != cout:
            if one_d:
                self.pointwise = Conv1d(Conv1dSpec(cin, cout, 1), rng, dtype)
            else:
                self.pointwise = conv1x1(cin, cout, rng, dtype)
        else:
            self.pointwise = None

    def forward(self, x: Tensor) -> Tensor:
        y = self.depthwise(x)
        if self.pointwise is not None:
            if self.activation:
                y = ops.gelu(y)
            y = self.pointwise(y)
        return y
