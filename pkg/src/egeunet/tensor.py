"""Dense tensors with tape-based reverse-mode differentiation.

Storage is a contiguous numpy array. Every op returns a fresh array (no view
aliasing between tensors). Gradients are recorded only while a :class:`Tape`
is active, so inference never builds a graph::

    with Tape() as tape:
        loss = (w * x).sum()
    grads = backward(loss, tape)
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# Raise on NaN/Inf produced by any op; disable only for profiling.
CHECK_FINITE = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class BroadcastError(ShapeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class ParamTensor(Tensor):
    """A named learnable tensor. ``state`` holds optimizer slots."""

    __slots__ = ("state",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)
        self.state: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        self.grad = None


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable ops executed while the tape is active."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def clear(self) -> None:
        self.records.clear()


_ACTIVE: list[Tape] = []
_TRACERS: list = []  # objects with observe(op, input_shapes, output_shape, info)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn,
                op: str = "custom", **info) -> Tensor:
    """Wrap an op's output and, when a tape is active, record how to differentiate it.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    ``op`` and ``info`` are reported to any active cost tracer.
    """
    if _TRACERS:
        for tracer in _TRACERS:
            tracer.observe(op, [t.shape for t in inputs], data.shape, info)
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError("op produced non-finite values")
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.records.append((out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Replay ``tape`` in reverse and return ``{tensor: dloss/dtensor}`` for leaves.

    Each leaf's ``.grad`` is also set. Tensors listed in ``params`` that the loss
    does not reach get zero gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    pending: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        pending[loss] = np.ones_like(loss.data)
    produced = set()
    for out, inputs, fn in reversed(tape.records):
        produced.add(out)
        g = pending.pop(out, None)
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"gradient shape {gi.shape} does not match input {t.shape}")
            prev = pending.get(t)
            if gi.dtype != t.dtype:
                gi = gi.astype(t.dtype)
            pending[t] = gi if prev is None else prev + gi
    grads = {t: g for t, g in pending.items() if t not in produced}
    if params is not None:
        for p in params:
            if p not in grads:
                grads[p] = np.zeros_like(p.data)
    for t, g in grads.items():
        t.grad = g
    return grads


# ---------------------------------------------------------------- broadcasting


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Trailing-aligned broadcast where each pair of dims must match or be 1."""
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        da = a[-i] if i <= len(a) else 1
        db = b[-i] if i <= len(b) else 1
        if da != db and da != 1 and db != 1:
            raise BroadcastError(f"cannot broadcast shapes {a} and {b}")
        out.append(max(da, db))
    return tuple(reversed(out))


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes that broadcasting expanded to reach ``g.shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ------------------------------------------------------------------- elementwise


def _binary(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    broadcast_shape(a.shape, b.shape)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, op="add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, op="sub")


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, op="mul")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product where ``b`` broadcasts into ``a``'s shape.

    Unlike :func:`mul`, the output always has ``a``'s shape; ``b`` may only
    drop leading dims or carry size-1 dims.
    """
    a = as_tensor(a)
    b = as_tensor(b, a)
    if broadcast_shape(a.shape, b.shape) != a.shape:
        raise BroadcastError(f"cannot broadcast shapes {b.shape} into {a.shape}")

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, op="hadamard")


def div(a, b) -> Tensor:
    a, b = _binary(a, b)

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), bw, op="div")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), op="exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return make_result(out, (x,), lambda g: (g / x.data,), op="log")


# -------------------------------------------------------------------- reductions


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis)), (x,), bw, op="sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis), 1.0 / n)


# ---------------------------------------------------------------- shape algebra


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(src),), op="reshape")


def permute(x: Tensor, order: Sequence[int]) -> Tensor:
    order = tuple(int(o) for o in order)
    if sorted(order) != list(range(x.ndim)):
        raise ValueError(f"{order} is not a permutation of axes 0..{x.ndim - 1}")
    inverse = tuple(int(i) for i in np.argsort(order))
    out = np.ascontiguousarray(np.transpose(x.data, order))
    return make_result(out, (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),), op="permute")


def chunk_channels(x: Tensor, k: int) -> list[Tensor]:
    """Split axis 1 into ``k`` equal consecutive parts."""
    c = x.shape[1]
    if k <= 0 or c % k:
        raise ShapeError(f"channel count {c} is not divisible by {k}")
    step = c // k
    parts = []
    for j in range(k):
        lo, hi = j * step, (j + 1) * step

        def bw(g, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            return (full,)

        parts.append(make_result(x.data[:, lo:hi].copy(), (x,), bw, op="chunk"))
    return parts


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or p.shape[:1] + p.shape[2:] != ref[:1] + ref[2:]:
            raise ShapeError(f"cannot concatenate shapes {ref} and {p.shape} along channels")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]].copy() for i in range(len(parts)))

    return make_result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw, op="concat")
