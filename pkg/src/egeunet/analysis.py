"""Parameter/FLOP accounting and finite-difference gradient checking.

MACs are counted analytically from the shapes each op sees during one forward
pass. Conventions:

* conv: output elements x (in_channels / groups) x kh x kw
* hadamard / add / sub / mul / div, activations, exp/log: 1 per output element
* bilinear resize: 4 per output element
* channel norm: 5 per element
* 2x2 max pool: 1 per input element
* reshape, permute, chunk, concat: free
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from . import tensor as tc
from .nn import Module, current_scope
from .tensor import Tape, Tensor, backward

CONVENTIONS = {"mac_as_1_flop": 1, "mac_as_2_flops": 2}

# Published reference figures behind the PASS/FAIL bands.
PARAM_BAND = (45_000, 61_000)
PARAM_TARGET = 53_000
MAC_BAND = (0.050e9, 0.094e9)
MAC_TARGET = 0.072e9
ABLATION_TARGETS = {
    "multi_axis=false": 74_000,
    "dw_on_p=false": 50_000,
    "use_mask=false": 52_000,
    "use_dilation=false": 53_000,
}


class UnsupportedLayerError(RuntimeError):
    pass


def _numel(shape) -> int:
    return int(np.prod(shape)) if len(shape) else 1


def _conv_macs(in_shapes, out_shape, info) -> int:
    spec = info["spec"]
    return _numel(out_shape) * (spec.in_channels // spec.groups) * spec.kernel[0] * spec.kernel[1]


def _per_output(k: int) -> Callable:
    return lambda in_shapes, out_shape, info: k * _numel(out_shape)


def _per_input(k: int) -> Callable:
    return lambda in_shapes, out_shape, info: k * _numel(in_shapes[0])


def _free(in_shapes, out_shape, info) -> int:
    return 0


COST_RULES: dict[str, Callable] = {
    "conv": _conv_macs,
    "hadamard": _per_output(1),
    "add": _per_output(1),
    "sub": _per_output(1),
    "mul": _per_output(1),
    "div": _per_output(1),
    "exp": _per_output(1),
    "log": _per_output(1),
    "gelu": _per_output(1),
    "sigmoid": _per_output(1),
    "resize": _per_output(4),
    "norm": _per_output(5),
    "maxpool": _per_input(1),
    "sum": _per_input(1),
    "reshape": _free,
    "permute": _free,
    "chunk": _free,
    "concat": _free,
}

ELEMENTWISE = frozenset(COST_RULES) - {"conv", "reshape", "permute", "chunk", "concat"}


class CostTracer:
    """Collects (scope, op, macs) for every op executed while installed."""

    def __init__(self, include_elementwise: bool = True):
        self.include_elementwise = include_elementwise
        self.events: list[tuple[str, str, int]] = []

    def observe(self, op, in_shapes, out_shape, info) -> None:
        rule = COST_RULES.get(op)
        scope = current_scope() or "model"
        if rule is None:
            raise UnsupportedLayerError(f"no cost rule for op {op!r} in layer {scope!r}")
        if op in ELEMENTWISE and not self.include_elementwise:
            return
        self.events.append((scope, op, int(rule(in_shapes, out_shape, info))))

    @property
    def total(self) -> int:
        return sum(m for _, _, m in self.events)

    def __enter__(self) -> "CostTracer":
        tc._TRACERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        tc._TRACERS.remove(self)


@dataclass
class CostRow:
    name: str
    param_count: int
    mac_count: int


@dataclass
class CostReport:
    rows: list[CostRow]
    convention: str
    input_shape: tuple[int, ...]
    include_elementwise: bool = True
    totals: dict = field(default_factory=dict)

    def __post_init__(self):
        self.totals = {
            "params": sum(r.param_count for r in self.rows),
            "macs": sum(r.mac_count for r in self.rows),
        }

    @property
    def total_params(self) -> int:
        return self.totals["params"]

    @property
    def total_macs(self) -> int:
        return self.totals["macs"]

    def flops(self, convention: str | None = None) -> int:
        return self.total_macs * CONVENTIONS[convention or self.convention]

    def table(self) -> str:
        width = max([len(r.name) for r in self.rows] + [5])
        lines = [f"{'layer':<{width}}  {'params':>8}  {'MACs':>12}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.param_count:>8d}  {r.mac_count:>12d}")
        lines.append(f"{'TOTAL':<{width}}  {self.total_params:>8d}  {self.total_macs:>12d}")
        return "\n".join(lines)

    def machine_rows(self) -> list[dict]:
        return [{"name": r.name, "params": r.param_count, "macs": r.mac_count} for r in self.rows]


def count_params(model: Module) -> int:
    return sum(p.size for p in model.parameters())


def _trace(model: Module, input_shape, include_elementwise: bool) -> CostTracer:
    dtype = model.parameters()[0].dtype
    x = Tensor(np.zeros(input_shape, dtype=dtype))
    with CostTracer(include_elementwise) as tracer:
        model(x)
    return tracer


def cost_report(model: Module, input_shape=(1, 3, 256, 256), convention: str = "mac_as_1_flop",
                include_elementwise: bool = True) -> CostReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {sorted(CONVENTIONS)}")
    tracer = _trace(model, input_shape, include_elementwise)
    macs: dict[str, int] = {}
    for scope, _, m in tracer.events:
        macs[scope] = macs.get(scope, 0) + m
    owned = {path or "model": sum(p.size for p in mod._params.values()) for path, mod in model.modules()}
    names = [n for n in owned if owned[n] or macs.get(n)] + [n for n in macs if n not in owned and macs[n]]
    rows = [CostRow(n, owned.get(n, 0), macs.get(n, 0)) for n in names]
    return CostReport(rows, convention, tuple(input_shape), include_elementwise)


def count_flops(model: Module, input_shape=(1, 3, 256, 256), convention: str = "mac_as_1_flop",
                include_elementwise: bool = True) -> int:
    return cost_report(model, input_shape, convention, include_elementwise).flops()


def module_macs(module: Module, *inputs: Tensor, include_elementwise: bool = True) -> int:
    with CostTracer(include_elementwise) as tracer:
        module(*inputs)
    return tracer.total


# ------------------------------------------------------------- gradient checks

GRAD_TOL = 1e-4
GRAD_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    passed: bool
    n_checked: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_rel_err={self.max_rel_error:.3e}  elements={self.n_checked}"


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
              tol: float = GRAD_TOL, floor: float = GRAD_FLOOR, name: str = "op",
              max_elems: int | None = None, seed: int = 0, richardson: bool = True) -> GradcheckResult:
    """Compare tape gradients of ``fn(*inputs)`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection. For each
    input tensor the error is max|analytic - numeric| divided by
    max(max|analytic|, max|numeric|, floor); the result reports the worst
    input. ``max_elems`` caps how many entries per input are probed.
    With ``richardson`` the step-eps and step-eps/2 central differences are
    combined as (4 D(eps/2) - D(eps)) / 3, cancelling the eps^2 term.
    """
    rng = np.random.default_rng(seed)
    inputs = [t for t in inputs]
    proj = None

    def scalar() -> Tensor:
        nonlocal proj
        out = fn(*inputs)
        if out.size == 1:
            return out.reshape(())
        if proj is None:
            proj = Tensor(rng.standard_normal(out.shape))
        return tc.tsum(tc.mul(out, proj))

    with Tape() as tape:
        loss = scalar()
    grads = backward(loss, tape, [t for t in inputs if t.requires_grad])
    worst = 0.0
    n_checked = 0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = grads[t].reshape(-1)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = np.sort(rng.choice(flat.size, size=max_elems, replace=False))
        numeric = np.empty(idx.size)

        def central(i, h):
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar().item()
            flat[i] = orig - h
            fm = scalar().item()
            flat[i] = orig
            return (fp - fm) / (2 * h)

        for k, i in enumerate(idx):
            d = central(i, eps)
            numeric[k] = (4.0 * central(i, eps / 2) - d) / 3.0 if richardson else d
        a = analytic[idx]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
        worst = max(worst, float(np.abs(a - numeric).max(initial=0.0) / scale))
        n_checked += idx.size
    return GradcheckResult(name, worst, worst < tol, n_checked)


@contextlib.contextmanager
def inject_fault():
    """Make conv2d return the spatially transposed weight gradient."""
    ops.FAULTS.add("conv_weight_transpose")
    try:
        yield
    finally:
        ops.FAULTS.discard("conv_weight_transpose")


def _param(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _module_check(name, module: Module, make_inputs, eps, max_elems=None) -> GradcheckResult:
    params = module.parameters()
    extra = make_inputs()
    n = len(extra)

    def fn(*args):
        return module(*args[:n])

    return gradcheck(fn, list(extra) + params, eps=eps, name=name, max_elems=max_elems)


def gradcheck_suite(eps: float = 1e-3) -> list[GradcheckResult]:
    """Double-precision gradient checks of every differentiable op and of GHPA and GAB."""
    from .gab import GAB, GabConfig
    from .ghpa import GHPA, GhpaConfig, HpaBranch
    from .losses import LossWeights, bce_loss, deep_supervision_loss, dice_loss
    from .ops import Conv1dSpec, Conv2dSpec, ResizeSpec

    f64 = np.float64
    rng = np.random.default_rng(1234)
    results = []

    def check(name, fn, *inputs, **kw):
        results.append(gradcheck(fn, list(inputs), eps=eps, name=name, **kw))

    a, b = _param(rng, (2, 3, 4, 4)), _param(rng, (3, 1, 4))
    check("hadamard", tc.hadamard, a, b)
    check("add", tc.add, _param(rng, (2, 3, 4)), _param(rng, (3, 1)))
    check("sub", tc.sub, _param(rng, (2, 3, 4)), _param(rng, (4,)))
    check("mul", tc.mul, _param(rng, (2, 3, 4)), _param(rng, (2, 1, 4)))
    check("div", tc.div, _param(rng, (3, 4)), Tensor(rng.uniform(1.0, 2.0, (3, 4)), requires_grad=True))
    check("exp", tc.exp, _param(rng, (3, 4), 0.5))
    check("log", tc.log, Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True))
    check("sum", lambda x: tc.tsum(x, axis=1), _param(rng, (2, 3, 4)))
    check("mean", lambda x: tc.mean(x), _param(rng, (2, 3, 4)))
    check("reshape", lambda x: tc.reshape(x, (6, 4)), _param(rng, (2, 3, 4)))
    check("permute", lambda x: tc.permute(x, (0, 3, 1, 2)), _param(rng, (1, 2, 3, 4)))
    check("chunk_channels", lambda x: tc.concat_channels(tc.chunk_channels(x, 4)[::-1]), _param(rng, (2, 8, 3, 3)))
    check("concat_channels", lambda x, y: tc.concat_channels([x, y]), _param(rng, (1, 2, 3, 3)), _param(rng, (1, 3, 3, 3)))

    spec = Conv2dSpec(4, 4, 3, 1, 2, 2, groups=2)
    check("conv2d", lambda x, w, bb: ops.conv2d(x, w, bb, spec),
          _param(rng, (2, 4, 5, 5)), _param(rng, spec.weight_shape, 0.5), _param(rng, (4,)))
    sspec = Conv2dSpec(3, 4, 3, 2, 1)
    check("conv2d_strided", lambda x, w, bb: ops.conv2d(x, w, bb, sspec),
          _param(rng, (1, 3, 7, 7)), _param(rng, sspec.weight_shape, 0.5), _param(rng, (4,)))
    dspec = Conv2dSpec(3, 3, 3, 1, 1, 1, groups=3)
    check("conv2d_depthwise", lambda x, w, bb: ops.conv2d(x, w, bb, dspec),
          _param(rng, (2, 3, 5, 5)), _param(rng, dspec.weight_shape), _param(rng, (3,)))
    pspec = Conv2dSpec(4, 2, 1)
    check("conv2d_pointwise", lambda x, w, bb: ops.conv2d(x, w, bb, pspec),
          _param(rng, (2, 4, 3, 3)), _param(rng, pspec.weight_shape), _param(rng, (2,)))
    c1 = Conv1dSpec(4, 4, 3, 1, 1, 1, groups=4)
    check("conv1d", lambda x, w, bb: ops.conv1d(x, w, bb, c1),
          _param(rng, (2, 4, 6)), _param(rng, c1.weight_shape), _param(rng, (4,)))
    check("bilinear_resize", lambda x: ops.bilinear_resize(x, ResizeSpec(7, 5, True)), _param(rng, (1, 2, 4, 3)))
    check("bilinear_resize_half_pixel", lambda x: ops.bilinear_resize(x, ResizeSpec(3, 6, False)),
          _param(rng, (1, 2, 4, 3)))
    # well-separated values keep the argmax stable under +-eps
    pool_in = Tensor((rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.01), requires_grad=True)
    check("maxpool2d", ops.maxpool2d, pool_in)
    check("gelu", ops.gelu, _param(rng, (3, 5), 2.0))
    check("sigmoid", ops.sigmoid, _param(rng, (3, 5), 2.0))
    check("channel_norm", ops.channel_norm, _param(rng, (2, 6, 3, 3)), _param(rng, (6,)), _param(rng, (6,)))

    y = (rng.random((2, 1, 4, 4)) > 0.5).astype(f64)
    check("bce_loss", lambda x: bce_loss(x, y), _param(rng, (2, 1, 4, 4), 2.0))
    check("dice_loss", lambda x: dice_loss(x, y), _param(rng, (2, 1, 4, 4), 2.0))
    target = (rng.random((1, 1, 16, 16)) > 0.5).astype(f64)
    heads = [_param(rng, (1, 1, s, s)) for s in (16, 8, 4, 2, 2, 1)]
    check("deep_supervision_loss", lambda *h: deep_supervision_loss(list(h), target, LossWeights()), *heads)

    branch = HpaBranch(2, "channel-height", rng, dtype=f64)
    results.append(_module_check("hpa", branch, lambda: [_param(rng, (1, 2, 8, 8))], eps))
    ghpa = GHPA(GhpaConfig(8, 8), rng, dtype=f64)
    results.append(_module_check("ghpa", ghpa, lambda: [_param(rng, (1, 8, 8, 8))], eps))
    gab = GAB(GabConfig(8, 16), rng, dtype=f64)
    results.append(_module_check(
        "gab", gab,
        lambda: [_param(rng, (1, 8, 8, 8)), _param(rng, (1, 16, 4, 4)),
                 Tensor(rng.uniform(0.1, 0.9, (1, 1, 4, 4)), requires_grad=True)],
        eps))
    return results
