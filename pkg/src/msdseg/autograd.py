"""Dense float64 tensors with tape-based reverse-mode differentiation.

A `Tape` is a context manager; while one is active, every operation whose
inputs are tracked appends a node holding the backward closure. Nodes are
appended in execution order, which is already topological, so `backward`
makes a single reverse sweep and visits each node exactly once.

Tensors are immutable once created (only `backward` writes `.grad`). Tape
construction is single-threaded per model instance; independent instances
may run on separate threads since the active-tape stack is thread-local.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, DimensionError

_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-D float64 array, optionally participating in the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
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
        return neg(self)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class _Node:
    __slots__ = ("op", "inputs", "backward_fn", "leaf")

    def __init__(self, op: str, inputs: tuple, backward_fn, leaf: Tensor | None = None):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.leaf = leaf


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack().pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def _register_leaf(self, t: Tensor) -> int:
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None, leaf=t))
            self._leaf_ids[id(t)] = nid
        t._tape = self
        t.node_id = nid
        return nid

    def node_of(self, t: Tensor) -> int | None:
        return self._leaf_ids.get(id(t))

    def grad_of(self, t: Tensor, grads: dict[int, Tensor]) -> Tensor:
        """Gradient of a leaf from a backward() result; zeros when untouched."""
        nid = self._leaf_ids.get(id(t))
        if nid is None or nid not in grads:
            return Tensor(np.zeros_like(t.data))
        return grads[nid]


def _track(tape: Tape, t: Tensor) -> int | None:
    if t._tape is tape and t.node_id is not None:
        return t.node_id
    if t.requires_grad:
        return tape._register_leaf(t)
    return None


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap op output; append a tape node if any input is tracked.

    `backward_fn(grad_out)` must return one array (or None) per input and
    never a view that aliases its argument.
    """
    out = Tensor(out_data)
    tape = current_tape()
    if tape is None:
        return out
    ids = tuple(_track(tape, t) for t in inputs)
    if all(i is None for i in ids):
        return out
    out.requires_grad = True
    out.node_id = len(tape.nodes)
    out._tape = tape
    tape.nodes.append(_Node(op, ids, backward_fn))
    return out


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Reverse sweep from a scalar loss.

    Returns {node_id: gradient} for every requires_grad leaf registered on
    the tape (zeros for leaves disconnected from the loss) and mirrors leaf
    gradients into `tensor.grad`.
    """
    if loss.data.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or loss.node_id is None:
        raise ArgumentError("loss is not recorded on a tape (constant or tape closed)")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.node_id] = np.ones_like(loss.data)
    for nid in range(loss.node_id, -1, -1):
        g = grads[nid]
        node = tape.nodes[nid]
        if g is None or node.backward_fn is None:
            continue
        for iid, ig in zip(node.inputs, node.backward_fn(g)):
            if iid is None or ig is None:
                continue
            # `+` rather than `+=`: first contribution may alias g
            grads[iid] = ig if grads[iid] is None else grads[iid] + ig

    result: dict[int, Tensor] = {}
    for nid, node in enumerate(tape.nodes):
        if node.leaf is None or not node.leaf.requires_grad:
            continue
        g = grads[nid]
        arr = np.zeros_like(node.leaf.data) if g is None else np.asarray(g)
        node.leaf.grad = arr
        result[nid] = Tensor(arr)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise suite -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}") from e
    return _record("add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}") from e
    return _record("sub", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}") from e
    return _record(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.data / b.data
    except ValueError as e:
        raise DimensionError(f"div: incompatible shapes {a.shape} and {b.shape}") from e
    return _record(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _coerce(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    # overflow-safe in both tails
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def sqrt(a) -> Tensor:
    a = _coerce(a)
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def _norm_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ArgumentError(f"axis {a} out of range for ndim {ndim}")
        axes.append(a % ndim)
    return tuple(axes)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, a.shape).copy(),)

    return _record("sum", out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axes(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.data.ndim else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk / count, a.shape).copy(),)

    return _record("mean", out, (a,), bw)


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ArgumentError("concat needs at least one tensor")
    ndim = ts[0].data.ndim
    axis = axis % ndim
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != ndim or other[:axis] + other[axis + 1 :] != base[:axis] + base[axis + 1 :]:
            raise DimensionError(f"concat: shape {t.shape} incompatible with {ts[0].shape} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    widths = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        sl = [slice(None)] * ndim
        parts = []
        for i in range(len(ts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            parts.append(g[tuple(sl)].copy())
        return tuple(parts)

    return _record("concat", out, ts, bw)


def l2_normalize(a, axis: int, eps: float = 1e-12) -> Tensor:
    """x / sqrt(sum(x^2, axis) + eps), as a composite of primitive ops."""
    a = _coerce(a)
    denom = sqrt(add(sum_(mul(a, a), axis, keepdims=True), eps))
    return div(a, denom)


# -- shape plumbing ----------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape).copy(),))


def transpose(a, axes=None) -> Tensor:
    a = _coerce(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    out = a.data.transpose(axes)
    return _record("transpose", out, (a,), lambda g: (g.transpose(inv).copy(),))


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _coerce(a)
    axis = axis % a.data.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ArgumentError(f"narrow [{start}:{start + length}] out of bounds for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = a.data[sl].copy()

    def bw(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return _record("narrow", out, (a,), bw)


def broadcast_to(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape).copy()
    return _record("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    return _record("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def softmax(a, axis: int) -> Tensor:
    a = _coerce(a)
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ArgumentError(f"softmax axis {axis} out of range for ndim {ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", out, (a,), bw)


# -- convolution and resampling ----------------------------------------------

def conv2d(x, weight, bias, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation over NCHW input with an OIHW weight."""
    x, weight, bias = _coerce(x), _coerce(weight), _coerce(bias)
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    if dilation < 1:
        raise ArgumentError(f"dilation must be >= 1, got {dilation}")
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d channels differ: input has {x.shape[1]}, weight expects {weight.shape[1]}")
    if bias.data.ndim != 1 or bias.shape[0] != weight.shape[0]:
        raise DimensionError(f"conv2d bias shape {bias.shape} does not match {weight.shape[0]} filters")
    kh, kw = weight.shape[2], weight.shape[3]
    if kh < 1 or kw < 1:
        raise ArgumentError("kernel extents must be >= 1")
    oh = kernels.conv_output_size(x.shape[2], kh, stride, padding, dilation)
    ow = kernels.conv_output_size(x.shape[3], kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"dilated {kh}x{kw} kernel does not fit {x.shape[2]}x{x.shape[3]} input with padding {padding}"
        )
    out = kernels.conv2d_forward(x.data, weight.data, bias.data, stride, padding, dilation)

    def bw(g):
        return kernels.conv2d_backward(x.data, weight.data, np.ascontiguousarray(g), stride, padding, dilation)

    return _record("conv2d", out, (x, weight, bias), bw)


def bilinear_upsample(x, scale: int) -> Tensor:
    """Scale H and W by an integer factor, align-corners=false."""
    x = _coerce(x)
    if x.data.ndim != 4:
        raise DimensionError(f"bilinear_upsample expects NCHW input, got {x.shape}")
    if scale < 1:
        raise ArgumentError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return _record("bilinear_upsample", x.data.copy(), (x,), lambda g: (g.copy(),))
    h, w = x.shape[2], x.shape[3]
    out = kernels.resize_bilinear(x.data, h * scale, w * scale)

    def bw(g):
        return (kernels.resize_bilinear_backward(np.ascontiguousarray(g), h, w),)

    return _record("bilinear_upsample", out, (x,), bw)


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of same-shape tensors (left-to-right summation)."""
    if not tensors:
        raise ArgumentError("mean_of needs at least one tensor")
    acc = tensors[0]
    for t in tensors[1:]:
        acc = add(acc, t)
    return mul(acc, 1.0 / len(tensors))
